#include <gtest/gtest.h>

#include "unigraph/pretrain.hpp"

using namespace unigraph;

namespace {

ModelState tiny_state(int d = 4, int vocab_hint = 16, std::uint64_t seed = 3) {
  Vocab vocab = build_vocab({"one two three four five six seven eight nine ten"}, vocab_hint);
  LmConfig lm_cfg;
  lm_cfg.vocab_size = vocab.size();
  lm_cfg.d = d;
  lm_cfg.num_layers = 1;
  lm_cfg.num_heads = 2;
  lm_cfg.max_len = 8;
  lm_cfg.dropout = 0.0;
  GatConfig gat_cfg;
  gat_cfg.d = d;
  gat_cfg.num_layers = 1;
  gat_cfg.num_heads = 1;
  gat_cfg.attention_dropout = 0.0;
  return ModelState::init(lm_cfg, gat_cfg, vocab, seed);
}

}  // namespace

TEST(DecodeLogits, ShapeContract) {
  ModelState s = tiny_state(4);
  Matrix hidden(4, 4);  // n_v = 2 -> 4 rows
  std::vector<double> cls = {0.1, 0.2, 0.3, 0.4};
  Matrix logits = decode_logits(s, hidden, cls);
  EXPECT_EQ(logits.rows(), 4);
  EXPECT_EQ(logits.cols(), s.vocab.size());
}

TEST(DecodeLogits, ZeroDecoderWeightsGiveConstantRows) {
  ModelState s = tiny_state(4);
  s.decoder_w.value.zero();
  s.decoder_b.value.zero();
  Matrix hidden(3, 4);
  for (std::size_t i = 0; i < hidden.size(); ++i) hidden.data()[i] = static_cast<double>(i);
  Matrix logits = decode_logits(s, hidden, {1.0, -2.0, 0.5, 3.0});
  for (int i = 1; i < logits.rows(); ++i)
    for (int j = 0; j < logits.cols(); ++j) EXPECT_DOUBLE_EQ(logits(i, j), logits(0, j));
}

TEST(DecodeLogits, ScalarArithmeticOracle) {
  // d = 1, vocab = 2, every weight 1 and every bias 0
  Vocab vocab;
  vocab.id_to_token = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "w", "q"};
  for (int i = 0; i < vocab.size(); ++i) vocab.token_to_id[vocab.id_to_token[i]] = i;
  // vocab size 7 but the head maps to 2 ids: rebuild a minimal state by hand
  LmConfig lm_cfg;
  lm_cfg.vocab_size = vocab.size();
  lm_cfg.d = 1;
  lm_cfg.num_layers = 1;
  lm_cfg.num_heads = 1;
  lm_cfg.max_len = 4;
  GatConfig gat_cfg;
  gat_cfg.d = 1;
  gat_cfg.num_layers = 1;
  gat_cfg.num_heads = 1;
  ModelState s = ModelState::init(lm_cfg, gat_cfg, vocab, 1);
  s.decoder_w.value.fill(1.0);
  s.decoder_b.value.zero();
  s.head_w1.value.fill(1.0);
  s.head_b1.value.zero();
  s.head_w2.value.fill(1.0);
  s.head_b2.value.zero();

  Matrix hidden(2, 1);
  hidden(0, 0) = 1.0;
  hidden(1, 0) = 2.0;
  Matrix logits = decode_logits(s, hidden, {3.0});

  // straight line: concat rows [1,3],[2,3] -> decoder sums to 4 and 5 ->
  // head: gelu(x) -> every vocab logit equals gelu(decoder output)
  auto gelu_ref = [](double x) { return x * 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); };
  for (int j = 0; j < logits.cols(); ++j) {
    EXPECT_NEAR(logits(0, j), gelu_ref(4.0), 1e-12);
    EXPECT_NEAR(logits(1, j), gelu_ref(5.0), 1e-12);
  }
}

TEST(DecodeLogits, WidthMismatchThrows) {
  ModelState s = tiny_state(4);
  Matrix hidden(3, 4);
  EXPECT_THROW(decode_logits(s, hidden, {1.0, 2.0}), std::invalid_argument);
}

TEST(MlmLoss, UniformLogitsGiveLogVocab) {
  const int v = 10;
  Matrix logits(4, v);
  logits.fill(0.37);
  TokenSequence orig;
  orig.ids = {Vocab::kCls, 5, 6, Vocab::kSep};
  orig.content_len = 2;
  MaskedSequence masked;
  masked.ids = {Vocab::kCls, Vocab::kMask, Vocab::kMask, Vocab::kSep};
  masked.mask_flags = {0, 1, 1, 0};
  const double loss = mlm_loss({logits}, {masked}, {orig});
  EXPECT_NEAR(loss, std::log(10.0), 1e-9);
  EXPECT_NEAR(loss, 2.302585092994046, 1e-9);
}

TEST(MlmLoss, NoMaskedTokensIsZero) {
  Matrix logits(3, 8);
  TokenSequence orig;
  orig.ids = {Vocab::kCls, 5, Vocab::kSep};
  orig.content_len = 1;
  MaskedSequence masked;
  masked.ids = orig.ids;
  masked.mask_flags = {0, 0, 0};
  EXPECT_EQ(mlm_loss({logits}, {masked}, {orig}), 0.0);
}

TEST(MlmLoss, SingleMaskedClosedForm) {
  Matrix logits(3, 2);
  logits(1, 0) = 1.0;
  logits(1, 1) = 0.0;
  TokenSequence orig;
  orig.ids = {Vocab::kCls, 0, Vocab::kSep};
  orig.content_len = 1;
  MaskedSequence masked;
  masked.ids = {Vocab::kCls, Vocab::kMask, Vocab::kSep};
  masked.mask_flags = {0, 1, 0};
  const double loss = mlm_loss({logits}, {masked}, {orig});
  EXPECT_NEAR(loss, -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)), 1e-12);
  EXPECT_NEAR(loss, 0.31326168751822286, 1e-9);
}

TEST(MlmLoss, GlobalNormalizerAcrossNodes) {
  // two nodes, different masked counts: the denominator is the total count
  Matrix l1(3, 2), l2(4, 2);
  l1(1, 0) = 2.0;
  l2(1, 1) = 1.0;
  l2(2, 0) = -1.0;
  TokenSequence o1, o2;
  o1.ids = {Vocab::kCls, 0, Vocab::kSep};
  o1.content_len = 1;
  o2.ids = {Vocab::kCls, 1, 0, Vocab::kSep};
  o2.content_len = 2;
  MaskedSequence m1, m2;
  m1.ids = {Vocab::kCls, Vocab::kMask, Vocab::kSep};
  m1.mask_flags = {0, 1, 0};
  m2.ids = {Vocab::kCls, Vocab::kMask, Vocab::kMask, Vocab::kSep};
  m2.mask_flags = {0, 1, 1, 0};

  auto ce = [](const Matrix& l, int row, int target) {
    const double mx = std::max(l(row, 0), l(row, 1));
    const double lse = mx + std::log(std::exp(l(row, 0) - mx) + std::exp(l(row, 1) - mx));
    return lse - l(row, target);
  };
  const double expected = (ce(l1, 1, 0) + ce(l2, 1, 1) + ce(l2, 2, 0)) / 3.0;
  EXPECT_NEAR(mlm_loss({l1, l2}, {m1, m2}, {o1, o2}), expected, 1e-12);
}

TEST(MlmLoss, TapeAndPlainRoutesAgree) {
  Rng rng(7);
  const int rows = 6, vocab = 9;
  Matrix logits(rows, vocab);
  for (std::size_t i = 0; i < logits.size(); ++i) logits.data()[i] = rng.uniform(-2, 2);
  std::vector<int> targets(rows);
  std::vector<char> flags(rows);
  for (int i = 0; i < rows; ++i) {
    targets[i] = static_cast<int>(rng.below(vocab));
    flags[i] = rng.uniform() < 0.5 ? 1 : 0;
  }
  flags[0] = 1;
  long long count = 0;
  for (char f : flags) count += f;

  Tape t;
  Tape::V sum = t.masked_ce_sum(t.leaf(logits), targets, flags);
  const double tape_loss = t.val(sum)(0, 0) / static_cast<double>(count);

  // plain route through mlm_loss with a single synthetic node
  TokenSequence orig;
  MaskedSequence masked;
  orig.ids.assign(rows, 0);
  masked.ids.assign(rows, 0);
  masked.mask_flags.assign(rows, 0);
  for (int i = 0; i < rows; ++i) {
    orig.ids[i] = targets[i];
    masked.mask_flags[i] = flags[i];
  }
  orig.content_len = rows - 2;
  EXPECT_NEAR(mlm_loss({logits}, {masked}, {orig}), tape_loss, 1e-12);
}

TEST(LatentLoss, IdenticalOrthogonalOpposite) {
  Matrix z(2, 2), t_same(2, 2), t_orth(2, 2), t_opp(2, 2);
  z(0, 0) = 1.0; z(1, 1) = 2.0;
  t_same = z;
  t_orth(0, 1) = 1.0; t_orth(1, 0) = 5.0;
  t_opp(0, 0) = -3.0; t_opp(1, 1) = -0.5;
  EXPECT_NEAR(latent_loss(z, t_same), 0.0, 1e-9);
  EXPECT_NEAR(latent_loss(z, t_orth), 1.0, 1e-9);
  EXPECT_NEAR(latent_loss(z, t_opp), 2.0, 1e-9);
}

TEST(LatentLoss, ZeroRowContributesOneWithWarning) {
  Matrix z(2, 2), target(2, 2);
  z(0, 0) = 1.0;
  target(0, 0) = 1.0;
  target(1, 0) = 1.0;  // z row 1 is zero
  int warnings = 0;
  EXPECT_NEAR(latent_loss(z, target, &warnings), 0.5, 1e-12);
  EXPECT_EQ(warnings, 1);
}

TEST(FusedLoss, TotalIsMaskPlusLambdaLatent) {
  ModelState s = tiny_state(8);
  auto g = generate_synthetic_tag(2, 4, 0.6, 0.2, default_synthetic_vocab(), 5);
  std::vector<NodeId> all = {0, 1, 2, 3, 4, 5, 6, 7};
  ContextSubgraph sub = induced_subgraph(g, all, 0);
  // retokenize with this state's vocab
  std::vector<TokenSequence> toks;
  for (const auto& text : g.node_texts()) toks.push_back(tokenize(s.vocab, text, s.lm_cfg.max_len));
  std::vector<const TokenSequence*> origs;
  std::vector<const std::vector<int>*> ids;
  std::vector<MaskedSequence> masked;
  Rng rng(2);
  for (auto& t : toks) {
    origs.push_back(&t);
    ids.push_back(&t.ids);
    masked.push_back(mask_tokens(t, 0.6, rng));
  }
  Matrix target = target_forward(s, sub, ids);
  for (double lambda : {0.0, 0.1, 1.0}) {
    Tape t;
    ForwardLosses l = fused_loss_tape(t, s, sub, masked, origs, target, lambda, "lm_cls", nullptr, false, nullptr);
    EXPECT_NEAR(t.val(l.total)(0, 0), t.val(l.loss_mask)(0, 0) + lambda * t.val(l.loss_latent)(0, 0), 1e-6);
    EXPECT_GE(t.val(l.loss_mask)(0, 0), 0.0);
    EXPECT_GE(t.val(l.loss_latent)(0, 0), 0.0);
    EXPECT_LE(t.val(l.loss_latent)(0, 0), 2.0);
  }
}
