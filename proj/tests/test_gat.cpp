#include "unigraph/gat.hpp"

#include <gtest/gtest.h>

using namespace unigraph;

namespace {

Matrix random_matrix(int r, int c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

ContextSubgraph edgeless(int n) {
  ContextSubgraph sub;
  for (int v = 0; v < n; ++v) sub.local_to_global.push_back(static_cast<NodeId>(v));
  sub.csr_offsets.assign(n + 1, 0);
  return sub;
}

ContextSubgraph two_node_edge() {
  ContextSubgraph sub;
  sub.local_to_global = {0, 1};
  sub.csr_offsets = {0, 1, 2};
  sub.csr_targets = {1, 0};
  sub.parent_entries = {0, 1};
  return sub;
}

GatConfig small_cfg(int d, int layers = 1, int heads = 1, bool residual = false) {
  GatConfig cfg;
  cfg.d = d;
  cfg.num_layers = layers;
  cfg.num_heads = heads;
  cfg.attention_dropout = 0.0;
  cfg.residual = residual;
  return cfg;
}

double elu_ref(double x) { return x > 0.0 ? x : std::expm1(x); }

}  // namespace

TEST(GatForward, EdgelessIsSelfTermOnly) {
  GatConfig cfg = small_cfg(2);
  Rng rng(3);
  GatParams params;
  params.init(cfg, rng);
  ContextSubgraph sub = edgeless(3);
  Matrix x = random_matrix(3, 2, rng);
  Matrix out = gat_forward(cfg, params, sub, x);
  // with only the self slot, attention weight is 1: row v = elu(W^T x_v)
  const Matrix& w = params.layers[0].w.value;
  for (int v = 0; v < 3; ++v)
    for (int j = 0; j < 2; ++j) {
      double z = 0.0;
      for (int k = 0; k < 2; ++k) z += x(v, k) * w(k, j);
      EXPECT_NEAR(out(v, j), elu_ref(z), 1e-12);
    }
}

TEST(GatForward, EdgelessRowsAreIndependent) {
  GatConfig cfg = small_cfg(4, 2, 2, /*residual=*/true);
  Rng rng(5);
  GatParams params;
  params.init(cfg, rng);
  ContextSubgraph sub = edgeless(4);
  Matrix x = random_matrix(4, 4, rng);
  Matrix out1 = gat_forward(cfg, params, sub, x);
  Matrix x2 = x;
  for (int j = 0; j < 4; ++j) x2(2, j) = 100.0;  // perturb another row
  Matrix out2 = gat_forward(cfg, params, sub, x2);
  for (int j = 0; j < 4; ++j) {
    EXPECT_DOUBLE_EQ(out1(0, j), out2(0, j));
    EXPECT_DOUBLE_EQ(out1(1, j), out2(1, j));
    EXPECT_DOUBLE_EQ(out1(3, j), out2(3, j));
  }
}

TEST(GatForward, TwoNodeHandOracle) {
  // single head, d = 2, one layer, no residual; straight-line reference
  GatConfig cfg = small_cfg(2);
  GatParams params;
  Rng rng(11);
  params.init(cfg, rng);
  Matrix& w = params.layers[0].w.value;
  Matrix& asrc = params.layers[0].attn_src.value;
  Matrix& adst = params.layers[0].attn_dst.value;
  w(0, 0) = 1.0; w(0, 1) = 0.0; w(1, 0) = 0.0; w(1, 1) = 1.0;
  asrc(0, 0) = 0.3; asrc(0, 1) = -0.2;
  adst(0, 0) = 0.1; adst(0, 1) = 0.4;

  Matrix x(2, 2);
  x(0, 0) = 1.0; x(0, 1) = 2.0;
  x(1, 0) = -1.0; x(1, 1) = 0.5;

  Matrix out = gat_forward(cfg, params, two_node_edge(), x);

  // z = x (identity weight); s_src[i] = z_i . asrc, s_dst[i] = z_i . adst
  auto leaky = [](double v) { return v > 0.0 ? v : 0.2 * v; };
  const double s_src0 = 1.0 * 0.3 + 2.0 * -0.2, s_dst0 = 1.0 * 0.1 + 2.0 * 0.4;
  const double s_src1 = -1.0 * 0.3 + 0.5 * -0.2, s_dst1 = -1.0 * 0.1 + 0.5 * 0.4;
  // node 0: slots {self=0, neighbor=1}
  {
    const double e_self = leaky(s_src0 + s_dst0), e_nb = leaky(s_src1 + s_dst0);
    const double m = std::max(e_self, e_nb);
    const double a_self = std::exp(e_self - m), a_nb = std::exp(e_nb - m);
    const double z = a_self + a_nb;
    for (int j = 0; j < 2; ++j) {
      const double expect = elu_ref((a_self / z) * x(0, j) + (a_nb / z) * x(1, j));
      EXPECT_NEAR(out(0, j), expect, 1e-12);
    }
  }
  // node 1: slots {self=1, neighbor=0}
  {
    const double e_self = leaky(s_src1 + s_dst1), e_nb = leaky(s_src0 + s_dst1);
    const double m = std::max(e_self, e_nb);
    const double a_self = std::exp(e_self - m), a_nb = std::exp(e_nb - m);
    const double z = a_self + a_nb;
    for (int j = 0; j < 2; ++j) {
      const double expect = elu_ref((a_self / z) * x(1, j) + (a_nb / z) * x(0, j));
      EXPECT_NEAR(out(1, j), expect, 1e-12);
    }
  }
}

TEST(GatForward, PermutationEquivariance) {
  Rng rng(17);
  GatConfig cfg = small_cfg(6, 2, 2, /*residual=*/true);
  GatParams params;
  params.init(cfg, rng);

  for (int trial = 0; trial < 5; ++trial) {
    const int n = 7;
    // random symmetric adjacency
    std::vector<std::vector<int>> adj(n);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (rng.uniform() < 0.4) {
          adj[i].push_back(j);
          adj[j].push_back(i);
        }
    auto build = [&](const std::vector<int>& relabel) {
      ContextSubgraph sub;
      sub.local_to_global.resize(n);
      for (int v = 0; v < n; ++v) sub.local_to_global[v] = static_cast<NodeId>(v);
      sub.csr_offsets = {0};
      std::vector<int> inv(n);
      for (int v = 0; v < n; ++v) inv[relabel[v]] = v;
      for (int v = 0; v < n; ++v) {
        std::vector<int> nb;
        for (int u : adj[inv[v]]) nb.push_back(relabel[u]);
        std::sort(nb.begin(), nb.end());
        for (int u : nb) {
          sub.csr_targets.push_back(static_cast<NodeId>(u));
          sub.parent_entries.push_back(0);
        }
        sub.csr_offsets.push_back(sub.csr_targets.size());
      }
      return sub;
    };

    std::vector<int> identity(n), perm(n);
    for (int v = 0; v < n; ++v) identity[v] = perm[v] = v;
    rng.shuffle(perm);

    Matrix x = random_matrix(n, 6, rng);
    Matrix out = gat_forward(cfg, params, build(identity), x);

    Matrix px(n, 6);
    for (int v = 0; v < n; ++v)
      for (int j = 0; j < 6; ++j) px(perm[v], j) = x(v, j);
    Matrix pout = gat_forward(cfg, params, build(perm), px);

    for (int v = 0; v < n; ++v)
      for (int j = 0; j < 6; ++j) EXPECT_NEAR(pout(perm[v], j), out(v, j), 1e-5);
  }
}

TEST(GatForward, AttentionWeightsSumToOne) {
  Rng rng(23);
  GatConfig cfg = small_cfg(4, 1, 1);
  GatParams params;
  params.init(cfg, rng);
  ContextSubgraph sub = two_node_edge();
  Matrix x = random_matrix(2, 4, rng);
  Tape t;
  Tape::GatDebug debug;
  gat_forward_tape(t, cfg, params, sub, t.leaf(x), nullptr, false, nullptr, &debug);
  ASSERT_EQ(debug.attention_sums.size(), 2u);
  for (double s : debug.attention_sums) EXPECT_NEAR(s, 1.0, 1e-6);
}

TEST(GatForward, UnitEdgeFeaturesMatchNoFeatures) {
  Rng rng(29);
  GatConfig cfg = small_cfg(4, 2, 2);
  GatParams params;
  params.init(cfg, rng);
  ContextSubgraph sub = two_node_edge();
  Matrix x = random_matrix(2, 4, rng);
  Matrix ones(2, 4);
  ones.fill(1.0);
  Matrix with = gat_forward(cfg, params, sub, x, &ones);
  Matrix without = gat_forward(cfg, params, sub, x);
  EXPECT_LT(max_abs_diff(with, without), 1e-12);
}

TEST(GatForward, EdgeFeatureScalesNeighborMessage) {
  // identity-ish single head: neighbor message gets multiplied elementwise
  GatConfig cfg = small_cfg(2);
  GatParams params;
  Rng rng(31);
  params.init(cfg, rng);
  params.layers[0].w.value.zero();
  params.layers[0].w.value(0, 0) = 1.0;
  params.layers[0].w.value(1, 1) = 1.0;
  params.layers[0].attn_src.value.zero();
  params.layers[0].attn_dst.value.zero();  // uniform attention: both slots 0.5

  ContextSubgraph sub = two_node_edge();
  Matrix x(2, 2);
  x(0, 0) = 1.0; x(0, 1) = 1.0;
  x(1, 0) = 1.0; x(1, 1) = 1.0;
  Matrix feats(2, 2);
  feats(0, 0) = 3.0; feats(0, 1) = 0.0;  // edge 0->1 entry
  feats(1, 0) = 3.0; feats(1, 1) = 0.0;
  Matrix out = gat_forward(cfg, params, sub, x, &feats);
  // row 0: 0.5 * self [1,1] + 0.5 * (neighbor [1,1] .* [3,0]) = [2.0, 0.5]
  EXPECT_NEAR(out(0, 0), elu_ref(2.0), 1e-12);
  EXPECT_NEAR(out(0, 1), elu_ref(0.5), 1e-12);
}

TEST(GatForward, ShapeMismatchThrows) {
  Rng rng(37);
  GatConfig cfg = small_cfg(4);
  GatParams params;
  params.init(cfg, rng);
  ContextSubgraph sub = two_node_edge();
  Tape t;
  Tape::V bad = t.leaf(random_matrix(3, 4, rng));  // 3 rows for a 2-node subgraph
  EXPECT_THROW(gat_forward_tape(t, cfg, params, sub, bad, nullptr, false, nullptr), std::invalid_argument);
}

TEST(EncodeEdgeFeatures, RowsAlignWithEntries) {
  Vocab vocab = build_vocab({"strong weak bond link"}, 32);
  LmConfig lm_cfg;
  lm_cfg.vocab_size = vocab.size();
  lm_cfg.d = 8;
  lm_cfg.num_layers = 1;
  lm_cfg.num_heads = 2;
  lm_cfg.max_len = 8;
  lm_cfg.dropout = 0.0;
  LmParams lm;
  Rng rng(41);
  lm.init(lm_cfg, rng);

  detail::EdgeAccum acc;
  acc.add(0, 1, "strong bond");
  acc.add(1, 2, "strong bond");
  auto g = detail::build_from_edges({"a", "b", "c"}, {"", "", ""}, acc, std::nullopt, {0, 1, 2});
  ASSERT_EQ(g.num_entries(), 4u);

  Matrix table = encode_edge_features(lm_cfg, lm, vocab, g);
  EXPECT_EQ(table.rows(), 4);
  EXPECT_EQ(table.cols(), 8);
  // identical edge texts give identical vectors
  for (int i = 1; i < 4; ++i)
    for (int j = 0; j < 8; ++j) EXPECT_DOUBLE_EQ(table(i, j), table(0, j));
}

TEST(EncodeEdgeFeatures, MissingEdgeTextsThrows) {
  Vocab vocab = build_vocab({"a"}, 8);
  LmConfig lm_cfg;
  lm_cfg.vocab_size = vocab.size();
  lm_cfg.d = 8;
  lm_cfg.num_layers = 1;
  lm_cfg.num_heads = 2;
  lm_cfg.max_len = 8;
  LmParams lm;
  Rng rng(43);
  lm.init(lm_cfg, rng);
  auto g = generate_synthetic_tag(2, 3, 0.5, 0.5, default_synthetic_vocab(), 1);
  EXPECT_THROW(encode_edge_features(lm_cfg, lm, vocab, g), std::invalid_argument);
}
