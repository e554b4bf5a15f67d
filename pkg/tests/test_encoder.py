"""Encoder tests: GIN updates, fusion, pooling, and whole-document encoding
against independent straight-line oracles."""

import numpy as np
import pytest

import structcoh.tensors as T
from structcoh.encoder import (
    AdapterParams,
    EdgeArrays,
    FusionParams,
    GinLayer,
    PoolParams,
    attentive_pool,
    cross_fuse,
    encode_document,
    encode_graph,
    gin_aggregate,
    gin_layer,
    input_adapter,
)
from structcoh.graphio import (
    DualGraphDocument,
    SyntacticGraph,
    TopicGraph,
    parse_conllu,
    build_document,
)
from structcoh.tensors import ContractError, Tape, Tensor, backward, gradcheck

from _oracles import (
    oracle_attentive_pool,
    oracle_cross_fuse,
    oracle_gin_layer,
    oracle_layer_norm,
)
from conftest import small_config
from structcoh.trainer import ModelParams

FIVE_NODE_DOC = (
    "1\tmela\tmela\tNOUN\t_\t_\t2\tnsubj\t_\t_\n"
    "2\tdovu\tdovu\tVERB\t_\t_\t0\troot\t_\t_\n"
    "3\trani\trani\tNOUN\t_\t_\t2\tobj\t_\t_\n"
    "\n"
    "1\trani\trani\tNOUN\t_\t_\t2\tnsubj\t_\t_\n"
    "2\tdovu\tdovu\tVERB\t_\t_\t0\troot\t_\t_\n"
)


def _identity_layer(d: int, rel_rows: int = 4) -> GinLayer:
    """eps=0, zero relation vectors. The MLP stays (W1, tanh, W2)."""
    return GinLayer(
        eps=Tensor(0.0, requires_grad=True),
        W1=Tensor(np.eye(d), requires_grad=True),
        b1=Tensor(np.zeros(d), requires_grad=True),
        W2=Tensor(np.eye(d), requires_grad=True),
        b2=Tensor(np.zeros(d), requires_grad=True),
        rel_table=Tensor(np.zeros((rel_rows, d)), requires_grad=True),
    )


def _random_layer(rng, d: int, rel_rows: int = 4) -> GinLayer:
    return GinLayer(
        eps=Tensor(rng.normal() * 0.1, requires_grad=True),
        W1=Tensor(rng.normal(size=(d, d)), requires_grad=True),
        b1=Tensor(rng.normal(size=d), requires_grad=True),
        W2=Tensor(rng.normal(size=(d, d)), requires_grad=True),
        b2=Tensor(rng.normal(size=d), requires_grad=True),
        rel_table=Tensor(rng.normal(size=(rel_rows, d)), requires_grad=True),
    )


def _random_edges(rng, n: int, rel_rows: int = 4, n_edges: int = 6) -> EdgeArrays:
    src = [int(rng.integers(n)) for _ in range(n_edges)]
    dst = [int(rng.integers(n)) for _ in range(n_edges)]
    rel = [int(rng.integers(rel_rows)) for _ in range(n_edges)]
    weight = [float(rng.uniform(0.2, 2.0)) for _ in range(n_edges)]
    return EdgeArrays(tuple(src), tuple(dst), tuple(rel), tuple(weight))


class TestGinAggregate:
    def test_isolated_node_with_eps_zero_is_identity(self):
        h = Tensor([[1.0, -2.0, 0.5]])
        edges = EdgeArrays((), (), (), ())
        out = gin_aggregate(h, edges, Tensor(0.0), Tensor(np.zeros((1, 3))))
        np.testing.assert_array_equal(out.data, h.data)

    def test_two_nodes_zero_relation(self):
        """With eps=0 and zero relation vector, the receiver gets h_i + h_j."""
        h = Tensor([[1.0, 2.0], [10.0, 20.0]])
        edges = EdgeArrays(src=(1,), dst=(0,), rel=(0,), weight=(1.0,))
        out = gin_aggregate(h, edges, Tensor(0.0), Tensor(np.zeros((1, 2))))
        np.testing.assert_array_equal(out.data[0], [11.0, 22.0])
        np.testing.assert_array_equal(out.data[1], [10.0, 20.0])

    def test_explicit_neighborhood_sums(self):
        """eps=0, zero relation vectors => exact neighbor sums, no tolerance."""
        rng = np.random.default_rng(0)
        n, d = 5, 3
        h = rng.normal(size=(n, d))
        edges = EdgeArrays(src=(0, 2, 3, 4), dst=(1, 1, 0, 2), rel=(0, 0, 0, 0),
                           weight=(1.0, 1.0, 1.0, 1.0))
        out = gin_aggregate(Tensor(h), edges, Tensor(0.0), Tensor(np.zeros((1, d))))
        expected = h.copy()
        expected[1] += h[0] + h[2]
        expected[0] += h[3]
        expected[2] += h[4]
        np.testing.assert_array_equal(out.data, expected)


class TestGinLayer:
    def test_matches_oracle_on_random_graphs(self):
        for seed in range(100):
            rng = np.random.default_rng(1000 + seed)
            n, d = int(rng.integers(2, 7)), 4
            h = rng.normal(size=(n, d))
            edges = _random_edges(rng, n)
            layer = _random_layer(rng, d)
            out = gin_layer(Tensor(h), edges, layer)
            expected = oracle_gin_layer(
                h, list(edges.src), list(edges.dst), list(edges.rel), list(edges.weight),
                layer.eps.item(), layer.W1.data, layer.b1.data, layer.W2.data, layer.b2.data,
                layer.rel_table.data,
            )
            np.testing.assert_allclose(out.data, expected, atol=1e-9, rtol=0)

    def test_four_node_fixture_matches_oracle(self):
        rng = np.random.default_rng(77)
        h = rng.normal(size=(4, 3))
        edges = EdgeArrays(src=(0, 1, 2, 3), dst=(1, 2, 3, 0), rel=(1, 0, 2, 3),
                           weight=(1.0, 0.5, 2.0, 1.0))
        layer = _random_layer(rng, 3)
        out = gin_layer(Tensor(h), edges, layer)
        expected = oracle_gin_layer(
            h, [0, 1, 2, 3], [1, 2, 3, 0], [1, 0, 2, 3], [1.0, 0.5, 2.0, 1.0],
            layer.eps.item(), layer.W1.data, layer.b1.data, layer.W2.data, layer.b2.data,
            layer.rel_table.data,
        )
        np.testing.assert_allclose(out.data, expected, atol=1e-9, rtol=0)


class TestInputAdapter:
    def test_identity_initialized_adapter(self):
        adapter = AdapterParams(W=Tensor(np.eye(3)), b=Tensor(np.zeros(3)))
        x0 = Tensor(np.random.default_rng(1).normal(size=(4, 3)))
        np.testing.assert_array_equal(input_adapter(x0, adapter).data, x0.data)

    def test_empty_graph_passes_through(self):
        adapter = AdapterParams(W=Tensor(np.eye(3)), b=Tensor(np.zeros(3)))
        out = input_adapter(Tensor(np.zeros((0, 3))), adapter)
        assert out.shape == (0, 3)

    def test_width_mismatch_rejected(self):
        adapter = AdapterParams(W=Tensor(np.eye(3)), b=Tensor(np.zeros(3)))
        with pytest.raises(ContractError):
            input_adapter(Tensor(np.zeros((2, 4))), adapter)

    def test_adapter_gradients(self):
        rng = np.random.default_rng(4)
        x0 = Tensor(rng.normal(size=(3, 2)))
        b = Tensor(rng.normal(size=3))
        probe = Tensor(rng.normal(size=(3, 3)))

        def f(W):
            out = input_adapter(x0, AdapterParams(W=W, b=b))
            return T.sum_all(T.mul(out, probe))

        assert gradcheck(f, Tensor(rng.normal(size=(2, 3))), h=1e-5, tol=1e-4).passed


class TestEncodeGraph:
    def test_single_layer_is_gin_plus_layer_norm(self):
        rng = np.random.default_rng(21)
        d = 4
        h0 = rng.normal(size=(3, d + 1))
        adapter = AdapterParams(W=Tensor(rng.normal(size=(d + 1, d))), b=Tensor(rng.normal(size=d)))
        layer = _random_layer(rng, d)
        edges = _random_edges(rng, 3)
        out = encode_graph(Tensor(h0), edges, adapter, [layer])
        adapted = input_adapter(Tensor(h0), adapter)
        expected = T.layer_norm_rows(gin_layer(adapted, edges, layer))
        np.testing.assert_allclose(out.data, expected.data, atol=1e-12, rtol=0)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(8)
        n, d = 5, 4
        h0 = rng.normal(size=(n, d))
        adapter = AdapterParams(W=Tensor(np.eye(d)), b=Tensor(np.zeros(d)))
        layers = [_random_layer(rng, d) for _ in range(2)]
        edges = _random_edges(rng, n)
        out = encode_graph(Tensor(h0), edges, adapter, layers)

        perm = list(rng.permutation(n))
        h0_p = np.zeros_like(h0)
        for old, new in enumerate(perm):
            h0_p[new] = h0[old]
        edges_p = EdgeArrays(
            tuple(perm[s] for s in edges.src), tuple(perm[t] for t in edges.dst),
            edges.rel, edges.weight,
        )
        out_p = encode_graph(Tensor(h0_p), edges_p, adapter, layers)
        for old, new in enumerate(perm):
            np.testing.assert_allclose(out_p.data[new], out.data[old], atol=1e-9, rtol=0)

    def test_three_layers_deterministic_under_seed(self):
        def run():
            rng = np.random.default_rng(33)
            h0 = rng.normal(size=(4, 3))
            adapter = AdapterParams(W=Tensor(np.eye(3)), b=Tensor(np.zeros(3)))
            layers = [_random_layer(rng, 3) for _ in range(3)]
            edges = EdgeArrays((0, 1, 2), (1, 2, 3), (0, 0, 0), (1.0, 1.0, 1.0))
            return encode_graph(Tensor(h0), edges, adapter, layers).data

        first, second = run(), run()
        np.testing.assert_array_equal(first, second)


class TestCrossFuse:
    def test_single_topic_node(self):
        rng = np.random.default_rng(2)
        d = 3
        HS = Tensor(rng.normal(size=(4, d)))
        HT = Tensor(rng.normal(size=(1, d)))
        fusion = FusionParams(Wq=Tensor(rng.normal(size=(d, d))), Wk=Tensor(rng.normal(size=(d, d))))
        fused, alpha = cross_fuse(HS, HT, fusion)
        np.testing.assert_allclose(alpha.data, np.ones((4, 1)), atol=0)
        np.testing.assert_allclose(fused.data, HS.data + HT.data[0], atol=1e-12)

    def test_zero_key_projection_gives_uniform_attention(self):
        rng = np.random.default_rng(3)
        d = 3
        HS = Tensor(rng.normal(size=(2, d)))
        HT = Tensor(rng.normal(size=(5, d)))
        fusion = FusionParams(Wq=Tensor(rng.normal(size=(d, d))), Wk=Tensor(np.zeros((d, d))))
        _, alpha = cross_fuse(HS, HT, fusion)
        np.testing.assert_allclose(alpha.data, np.full((2, 5), 0.2), atol=1e-12)

    def test_three_by_two_fixture_matches_oracle(self):
        rng = np.random.default_rng(4)
        d = 4
        HS, HT = rng.normal(size=(3, d)), rng.normal(size=(2, d))
        Wq, Wk = rng.normal(size=(d, d)), rng.normal(size=(d, d))
        fused, alpha = cross_fuse(Tensor(HS), Tensor(HT),
                                  FusionParams(Wq=Tensor(Wq), Wk=Tensor(Wk)))
        exp_fused, exp_alpha = oracle_cross_fuse(HS, HT, Wq, Wk)
        np.testing.assert_allclose(fused.data, exp_fused, atol=1e-9, rtol=0)
        np.testing.assert_allclose(alpha.data, exp_alpha, atol=1e-9, rtol=0)

    def test_oracle_agreement_on_100_seeds(self):
        for seed in range(100):
            rng = np.random.default_rng(2000 + seed)
            d = int(rng.integers(2, 6))
            n, k = int(rng.integers(1, 6)), int(rng.integers(1, 5))
            HS, HT = rng.normal(size=(n, d)), rng.normal(size=(k, d))
            Wq, Wk = rng.normal(size=(d, d)), rng.normal(size=(d, d))
            fused, alpha = cross_fuse(Tensor(HS), Tensor(HT),
                                      FusionParams(Wq=Tensor(Wq), Wk=Tensor(Wk)))
            exp_fused, exp_alpha = oracle_cross_fuse(HS, HT, Wq, Wk)
            np.testing.assert_allclose(fused.data, exp_fused, atol=1e-9, rtol=0)
            np.testing.assert_allclose(alpha.data, exp_alpha, atol=1e-9, rtol=0)
            assert np.allclose(alpha.data.sum(axis=1), 1.0, atol=1e-9)

    def test_empty_topic_graph_falls_back_to_pass_through(self):
        HS = Tensor(np.random.default_rng(5).normal(size=(3, 4)))
        fused, alpha = cross_fuse(HS, Tensor(np.zeros((0, 4))),
                                  FusionParams(Wq=Tensor(np.eye(4)), Wk=Tensor(np.eye(4))))
        np.testing.assert_array_equal(fused.data, HS.data)
        assert alpha.shape == (3, 0)


class TestAttentivePool:
    def test_identical_features_give_uniform_beta(self):
        rng = np.random.default_rng(6)
        d = 3
        row = rng.normal(size=d)
        HF = Tensor(np.stack([row] * 4))
        pool = PoolParams(Wa=Tensor(rng.normal(size=(d, d))), ba=Tensor(rng.normal(size=d)),
                          w=Tensor(rng.normal(size=d)))
        z, beta = attentive_pool(HF, pool)
        np.testing.assert_allclose(beta.data, [0.25] * 4, atol=1e-12)
        np.testing.assert_allclose(z.data, row, atol=1e-12)

    def test_single_node(self):
        rng = np.random.default_rng(7)
        d = 3
        HF = Tensor(rng.normal(size=(1, d)))
        pool = PoolParams(Wa=Tensor(rng.normal(size=(d, d))), ba=Tensor(rng.normal(size=d)),
                          w=Tensor(rng.normal(size=d)))
        z, beta = attentive_pool(HF, pool)
        np.testing.assert_allclose(beta.data, [1.0], atol=0)
        np.testing.assert_allclose(z.data, HF.data[0], atol=1e-12)

    def test_zero_scoring_vector_gives_uniform_beta(self):
        rng = np.random.default_rng(8)
        d = 3
        HF = Tensor(rng.normal(size=(5, d)))
        pool = PoolParams(Wa=Tensor(rng.normal(size=(d, d))), ba=Tensor(rng.normal(size=d)),
                          w=Tensor(np.zeros(d)))
        _, beta = attentive_pool(HF, pool)
        np.testing.assert_allclose(beta.data, [0.2] * 5, atol=1e-12)

    def test_empty_document_rejected(self):
        pool = PoolParams(Wa=Tensor(np.eye(2)), ba=Tensor(np.zeros(2)), w=Tensor(np.zeros(2)))
        with pytest.raises(ContractError):
            attentive_pool(Tensor(np.zeros((0, 2))), pool)

    def test_oracle_agreement_on_100_seeds(self):
        for seed in range(100):
            rng = np.random.default_rng(3000 + seed)
            n, d = int(rng.integers(1, 7)), int(rng.integers(2, 6))
            HF = rng.normal(size=(n, d))
            Wa, ba, w = rng.normal(size=(d, d)), rng.normal(size=d), rng.normal(size=d)
            z, beta = attentive_pool(Tensor(HF), PoolParams(Wa=Tensor(Wa), ba=Tensor(ba), w=Tensor(w)))
            exp_z, exp_beta = oracle_attentive_pool(HF, Wa, ba, w)
            np.testing.assert_allclose(z.data, exp_z, atol=1e-9, rtol=0)
            np.testing.assert_allclose(beta.data, exp_beta, atol=1e-9, rtol=0)
            assert abs(float(beta.data.sum()) - 1.0) <= 1e-9


def _oracle_encode_document(doc: DualGraphDocument, params) -> dict:
    """Straight-line reimplementation of the full eval-mode encoder."""
    cfg = params.config
    tables = params.tables
    x0 = np.array([
        np.concatenate([
            tables.token.data[tables.token_row(doc.tokens[i].lemma)],
            tables.position.data[doc.syntactic.position_rows[i]],
            tables.upos.data[doc.syntactic.upos_rows[i]],
        ])
        for i in range(len(doc.tokens))
    ])
    h = np.array([params.syn_adapter.W.data.T @ x + params.syn_adapter.b.data for x in x0])
    src, dst, rel, wgt = [], [], [], []
    for (head, dep), r in zip(doc.syntactic.edges, doc.syntactic.edge_rel_rows):
        src.append(head); dst.append(dep); rel.append(r); wgt.append(1.0)
        if cfg.reversed_edges:
            src.append(dep); dst.append(head); rel.append(r); wgt.append(1.0)
    for layer in params.syn_gin:
        h = oracle_gin_layer(h, src, dst, rel, wgt, layer.eps.item(),
                             layer.W1.data, layer.b1.data, layer.W2.data, layer.b2.data,
                             layer.rel_table.data)
        h = oracle_layer_norm(h)
    HS = h

    if doc.topic.node_count:
        y0 = np.array([
            np.mean([tables.token.data[r] for r in rows], axis=0)
            for rows in doc.topic.mention_rows
        ])
        ht = np.array([params.top_adapter.W.data.T @ y + params.top_adapter.b.data for y in y0])
        tsrc, tdst, trel, twgt = [], [], [], []
        for (k, l), w in zip(doc.topic.edges, doc.topic.weights):
            value = w if cfg.use_topic_edge_weights else 1.0
            tsrc += [k, l]; tdst += [l, k]; trel += [0, 0]; twgt += [value, value]
        for layer in params.top_gin:
            ht = oracle_gin_layer(ht, tsrc, tdst, trel, twgt, layer.eps.item(),
                                  layer.W1.data, layer.b1.data, layer.W2.data, layer.b2.data,
                                  layer.rel_table.data)
            ht = oracle_layer_norm(ht)
        HF, alpha = oracle_cross_fuse(HS, ht, params.fusion.Wq.data, params.fusion.Wk.data)
    else:
        ht = np.zeros((0, cfg.d))
        HF, alpha = HS.copy(), np.zeros((HS.shape[0], 0))
    z, beta = oracle_attentive_pool(HF, params.pool.Wa.data, params.pool.ba.data,
                                    params.pool.w.data)
    return {"H_S": HS, "H_T": ht, "H_F": HF, "z": z, "alpha": alpha, "beta": beta}


def _five_node_doc(params, cfg) -> DualGraphDocument:
    return build_document("probe", parse_conllu(FIVE_NODE_DOC), params.tables,
                          cfg.relation_table_rows, min_freq=2)


class TestEncodeDocument:
    def test_eval_mode_is_bit_deterministic(self):
        cfg = small_config()
        params = ModelParams(cfg)
        doc = _five_node_doc(params, cfg)
        a = encode_document(doc, params, mode="eval")
        b = encode_document(doc, params, mode="eval")
        np.testing.assert_array_equal(a.z.data, b.z.data)
        np.testing.assert_array_equal(a.H_F.data, b.H_F.data)

    def test_matches_straight_line_oracle(self):
        cfg = small_config()
        params = ModelParams(cfg)
        doc = _five_node_doc(params, cfg)
        enc = encode_document(doc, params, mode="eval")
        expected = _oracle_encode_document(doc, params)
        np.testing.assert_allclose(enc.H_S.data, expected["H_S"], atol=1e-9, rtol=0)
        np.testing.assert_allclose(enc.H_T.data, expected["H_T"], atol=1e-9, rtol=0)
        np.testing.assert_allclose(enc.H_F.data, expected["H_F"], atol=1e-9, rtol=0)
        np.testing.assert_allclose(enc.z.data, expected["z"], atol=1e-9, rtol=0)
        np.testing.assert_allclose(enc.alpha.data, expected["alpha"], atol=1e-9, rtol=0)
        np.testing.assert_allclose(enc.beta.data, expected["beta"], atol=1e-9, rtol=0)

    def test_attention_rows_and_beta_sum_to_one(self):
        cfg = small_config()
        params = ModelParams(cfg)
        doc = _five_node_doc(params, cfg)
        enc = encode_document(doc, params, mode="eval")
        np.testing.assert_allclose(enc.alpha.data.sum(axis=1), 1.0, atol=1e-9)
        assert abs(float(enc.beta.data.sum()) - 1.0) <= 1e-9
        assert np.all(enc.alpha.data >= 0) and np.all(enc.beta.data >= 0)
        assert enc.z.shape == (cfg.d,)

    def test_permutation_invariance_of_pooled_vector(self):
        cfg = small_config()
        params = ModelParams(cfg)
        doc = _five_node_doc(params, cfg)
        enc = encode_document(doc, params, mode="eval")

        rng = np.random.default_rng(13)
        n = doc.syntactic.node_count
        perm = list(rng.permutation(n))
        k = doc.topic.node_count
        tperm = list(rng.permutation(k))

        def permute_list(values, mapping):
            out = [None] * len(values)
            for old, new in enumerate(mapping):
                out[new] = values[old]
            return out

        syn = doc.syntactic
        syn_p = SyntacticGraph(
            token_rows=permute_list(syn.token_rows, perm),
            position_rows=permute_list(syn.position_rows, perm),
            upos_rows=permute_list(syn.upos_rows, perm),
            edges=[(perm[h], perm[d]) for h, d in syn.edges],
            edge_rel_rows=list(syn.edge_rel_rows),
            n_sentences=syn.n_sentences,
        )
        top = doc.topic
        tedges, tweights = [], []
        for (a, b), w in zip(top.edges, top.weights):
            x, y = tperm[a], tperm[b]
            tedges.append((min(x, y), max(x, y)))
            tweights.append(w)
        top_p = TopicGraph(
            lemmas=permute_list(top.lemmas, tperm),
            mentions=permute_list([[perm[m] for m in ms] for ms in top.mentions], tperm),
            mention_rows=permute_list(top.mention_rows, tperm),
            edges=tedges,
            weights=tweights,
        )
        doc_p = DualGraphDocument(
            doc_id=doc.doc_id, tokens=permute_list(doc.tokens, perm),
            sentence_bounds=doc.sentence_bounds, syntactic=syn_p, topic=top_p,
        )
        enc_p = encode_document(doc_p, params, mode="eval")
        np.testing.assert_allclose(enc_p.z.data, enc.z.data, atol=1e-9, rtol=0)
        for old, new in enumerate(perm):
            assert abs(enc_p.beta.data[new] - enc.beta.data[old]) <= 1e-9
            for told, tnew in enumerate(tperm):
                assert abs(enc_p.alpha.data[new, tnew] - enc.alpha.data[old, told]) <= 1e-9

    def test_fixture_z_matches_recorded_golden(self):
        """Regression pin: value recorded from the oracle-verified first run."""
        golden = [
            -2.573264390604328, -2.4030873852349957, 0.4477608639275673,
            0.9746977778272579, -1.1417227450128091, 1.3651301345996054,
            1.7342505403866082, 1.5962352041110939,
        ]
        cfg = small_config()
        params = ModelParams(cfg)
        doc = _five_node_doc(params, cfg)
        enc = encode_document(doc, params, mode="eval")
        np.testing.assert_allclose(enc.z.data, golden, atol=1e-9, rtol=0)

    def test_train_mode_without_rng_is_rejected(self):
        cfg = small_config(dropout=0.1)
        params = ModelParams(cfg)
        doc = _five_node_doc(params, cfg)
        with pytest.raises(ContractError):
            encode_document(doc, params, mode="train")

    def test_probe_gradient_passes_gradcheck_for_every_block(self):
        """d(w_probe . z)/d(theta) vs finite differences, every parameter."""
        cfg = small_config(d=6, d_tok=4, d_pos=3, d_type=3, layers=1,
                           token_table_rows=12, max_positions=8, relation_table_rows=6)
        params = ModelParams(cfg)
        doc = _five_node_doc(params, cfg)
        probe = Tensor(np.random.default_rng(99).normal(size=cfg.d))

        def f(_):
            return T.dot(probe, encode_document(doc, params, mode="eval").z)

        for name, p in params.named_parameters():
            report = gradcheck(f, p, h=1e-5, tol=1e-4)
            assert report.passed, f"{name}: {report.failures[:3]}"
