#include "unigraph/lm.hpp"

#include <gtest/gtest.h>

using namespace unigraph;

namespace {

struct Fixture {
  Vocab vocab;
  LmConfig cfg;
  LmParams params;

  explicit Fixture(int d = 16, std::uint64_t seed = 5) {
    vocab = build_vocab({"red green blue orange", "green violet", "blue red marsh"}, 32);
    cfg.vocab_size = vocab.size();
    cfg.d = d;
    cfg.num_layers = 2;
    cfg.num_heads = 4;
    cfg.max_len = 12;
    cfg.dropout = 0.0;
    Rng rng(seed);
    params.init(cfg, rng);
  }
};

}  // namespace

TEST(LmForward, ClsShapeMatchesBatch) {
  Fixture f;
  std::vector<TokenSequence> seqs = {tokenize(f.vocab, "red green", f.cfg.max_len),
                                     tokenize(f.vocab, "blue", f.cfg.max_len),
                                     tokenize(f.vocab, "violet orange red", f.cfg.max_len)};
  LmEvalOut out = lm_forward(f.cfg, f.params, seqs);
  EXPECT_EQ(out.cls.rows(), 3);
  EXPECT_EQ(out.cls.cols(), 16);
  ASSERT_EQ(out.hidden.size(), 3u);
  EXPECT_EQ(out.hidden[0].rows(), 4);  // [CLS] red green [SEP]
  EXPECT_EQ(out.hidden[1].rows(), 3);
  EXPECT_EQ(out.hidden[2].rows(), 5);
}

TEST(LmForward, BatchPermutationPermutesRows) {
  Fixture f;
  std::vector<TokenSequence> seqs = {tokenize(f.vocab, "red green blue", f.cfg.max_len),
                                     tokenize(f.vocab, "violet", f.cfg.max_len),
                                     tokenize(f.vocab, "marsh orange", f.cfg.max_len)};
  LmEvalOut a = lm_forward(f.cfg, f.params, seqs);
  std::vector<TokenSequence> perm = {seqs[2], seqs[0], seqs[1]};
  LmEvalOut b = lm_forward(f.cfg, f.params, perm);
  const int perm_map[3] = {2, 0, 1};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < f.cfg.d; ++j) EXPECT_DOUBLE_EQ(b.cls(i, j), a.cls(perm_map[i], j));
}

TEST(LmForward, DeterministicRepeatIsBitwiseEqual) {
  Fixture f;
  std::vector<TokenSequence> seqs = {tokenize(f.vocab, "red green blue", f.cfg.max_len),
                                     tokenize(f.vocab, "orange", f.cfg.max_len)};
  LmEvalOut a = lm_forward(f.cfg, f.params, seqs);
  LmEvalOut b = lm_forward(f.cfg, f.params, seqs);
  for (int i = 0; i < a.cls.rows(); ++i)
    for (int j = 0; j < a.cls.cols(); ++j) EXPECT_EQ(a.cls(i, j), b.cls(i, j));
}

TEST(LmForward, PaddingInvariance) {
  Fixture f;
  TokenSequence short_seq = tokenize(f.vocab, "red green", f.cfg.max_len);
  TokenSequence long_seq = tokenize(f.vocab, "blue violet orange marsh red green blue", f.cfg.max_len);
  // alone: padded to its own length; with long_seq: padded further
  LmEvalOut alone = lm_forward(f.cfg, f.params, {short_seq});
  LmEvalOut padded = lm_forward(f.cfg, f.params, {short_seq, long_seq});
  EXPECT_LT(max_abs_diff(alone.hidden[0], padded.hidden[0]), 1e-6);
}

TEST(LmForward, OutputFiniteForRandomParams) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Fixture f(16, seed);
    std::vector<TokenSequence> seqs = {tokenize(f.vocab, "red green blue orange violet marsh", f.cfg.max_len),
                                       tokenize(f.vocab, "", f.cfg.max_len)};
    LmEvalOut out = lm_forward(f.cfg, f.params, seqs);
    EXPECT_TRUE(out.cls.all_finite());
    for (const auto& h : out.hidden) EXPECT_TRUE(h.all_finite());
  }
}

TEST(LmForward, OverlongSequenceThrows) {
  Fixture f;
  TokenSequence seq;
  seq.ids.assign(f.cfg.max_len + 1, Vocab::kUnk);
  seq.ids.front() = Vocab::kCls;
  seq.ids.back() = Vocab::kSep;
  seq.content_len = f.cfg.max_len - 1;
  Tape t;
  std::vector<const std::vector<int>*> ids = {&seq.ids};
  EXPECT_THROW(lm_forward_tape(t, f.cfg, f.params, ids, false, nullptr), std::invalid_argument);
}

TEST(LmForward, EmptyBatchThrows) {
  Fixture f;
  Tape t;
  std::vector<const std::vector<int>*> ids;
  EXPECT_THROW(lm_forward_tape(t, f.cfg, f.params, ids, false, nullptr), std::invalid_argument);
}

TEST(LmConfig, ValidationRejectsBadShapes) {
  LmConfig c;
  c.d = 10;
  c.num_heads = 4;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = LmConfig{};
  c.max_len = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(LmForward, TrainingDropoutIsSeedReproducible) {
  Fixture f;
  LmConfig cfg = f.cfg;
  cfg.dropout = 0.3;
  std::vector<TokenSequence> seqs = {tokenize(f.vocab, "red green blue", cfg.max_len)};
  std::vector<const std::vector<int>*> ids = {&seqs[0].ids};
  Rng r1(9), r2(9);
  Tape t1, t2;
  auto a = lm_forward_tape(t1, cfg, f.params, ids, true, &r1);
  auto b = lm_forward_tape(t2, cfg, f.params, ids, true, &r2);
  EXPECT_EQ(max_abs_diff(t1.val(a.cls), t2.val(b.cls)), 0.0);
}
