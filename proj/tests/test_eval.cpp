#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "mlctl/error.hpp"
#include "mlctl/eval.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mlctl;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::size_t fields(const std::string& line) { return std::count(line.begin(), line.end(), '\t') + 1; }

Model small_model(std::size_t vocab) {
  EncoderConfig c;
  c.layers = 1;
  c.heads = 2;
  c.hidden = 8;
  c.ffn = 16;
  c.cce_dim = 8;
  c.vocab_size = vocab;
  return init_model(c, 1);
}

}  // namespace

TEST(Retrieval, OracleEmbeddingsScoreOne) {
  std::vector<std::vector<double>> q{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  EXPECT_EQ(top1_accuracy(q, q), 1.0);
}

TEST(Retrieval, ConstantEmbeddingsScoreOneOverN) {
  const std::vector<std::vector<double>> q(5, {1.0, 2.0});
  EXPECT_DOUBLE_EQ(top1_accuracy(q, q), 1.0 / 5.0);
  const std::vector<std::vector<double>> zero(4, {0.0, 0.0});
  EXPECT_DOUBLE_EQ(top1_accuracy(zero, zero), 1.0 / 4.0);
}

TEST(Retrieval, SwappedCandidatesScoreZero) {
  std::vector<std::vector<double>> q{{1, 0}, {0, 1}};
  std::vector<std::vector<double>> c{{0, 1}, {1, 0}};
  EXPECT_EQ(top1_accuracy(q, c), 0.0);
}

TEST(Retrieval, Preconditions) {
  EXPECT_THROW(top1_accuracy({{1.0}}, {{1.0}}), ContractError);
  EXPECT_THROW(top1_accuracy({{1.0}, {2.0}}, {{1.0}, {2.0}, {3.0}}), ContractError);
}

TEST(Retrieval, LevelNames) {
  EXPECT_EQ(retrieval_level_from_string(to_string(RetrievalLevel::Word)), RetrievalLevel::Word);
  EXPECT_EQ(retrieval_level_from_string(to_string(RetrievalLevel::Sentence)), RetrievalLevel::Sentence);
  EXPECT_THROW(retrieval_level_from_string("paragraph"), InputError);
}

TEST(Retrieval, EvalOnSyntheticSetupIsDeterministic) {
  const auto s = make_synthetic_setup(50, 20, 10, 3);
  EXPECT_EQ(s.heldout_pairs.size(), 10u);
  const auto m = small_model(s.vocab.size());
  const auto a = retrieval_eval(m, s.vocab, s.heldout_pairs, RetrievalLevel::Word, "x");
  const auto b = retrieval_eval(m, s.vocab, s.heldout_pairs, RetrievalLevel::Word, "x");
  EXPECT_EQ(a.items, 10u);
  EXPECT_EQ(a.a_to_b, b.a_to_b);
  EXPECT_EQ(a.b_to_a, b.b_to_a);
  EXPECT_GE(a.mean(), 0.0);
  EXPECT_LE(a.mean(), 1.0);
}

TEST(SyntheticSetup, HeldOutSentencesAreDisjointFromTraining) {
  const auto s = make_synthetic_setup(50, 30, 15, 9);
  std::set<std::size_t> train;
  for (const auto& p : s.train_pairs) train.insert(p.s.sentence.index);
  for (const auto& p : s.heldout_pairs) EXPECT_FALSE(train.count(p.s.sentence.index));
  std::set<std::size_t> held;
  for (const auto& p : s.heldout_pairs) held.insert(p.s.sentence.index);
  EXPECT_EQ(held.size(), s.heldout_pairs.size());
}

TEST(GradCheck, RelativeDeviation) {
  EXPECT_EQ(relative_deviation(0.0, 0.0, 0.0), 0.0);
  EXPECT_NEAR(relative_deviation(1.1, 1.0, 0.0), 0.1 / 1.1, 1e-15);
  EXPECT_DOUBLE_EQ(relative_deviation(1e-9, 0.0, 1e-3), 1e-6);
}

TEST(GradCheck, ReferenceLossMatchesNaiveOracle) {
  const auto batches = random_cce_batches(3, {3}, 5, 2);
  for (const auto& b : batches) {
    std::vector<std::vector<long double>> x, y;
    std::vector<std::vector<double>> xd, yd;
    for (std::size_t i = 0; i < b.size(); ++i) {
      xd.emplace_back(b.x[i].data().begin(), b.x[i].data().end());
      yd.emplace_back(b.y[i].data().begin(), b.y[i].data().end());
      x.emplace_back(xd.back().begin(), xd.back().end());
      y.emplace_back(yd.back().begin(), yd.back().end());
    }
    for (auto k : {LossKind::InfoNce, LossKind::CzNce}) {
      const auto ref = reference_batch_loss(x, y, 0.07L, k);
      const auto naive = oracle::naive_batch_loss(xd, yd, 0.07L, k == LossKind::InfoNce);
      EXPECT_NEAR(static_cast<double>(ref), static_cast<double>(naive), 1e-12);
    }
  }
}

TEST(GradCheck, SmallRunPasses) {
  const auto r = grad_equivalence_check(random_cce_batches(3, {2, 4}, 16, 5));
  EXPECT_EQ(r.batches, 3u);
  EXPECT_EQ(r.elements, (2 + 4 + 2) * 2 * 16u);
  EXPECT_LT(r.max_rel_cz_vs_rho, 1e-10);
  EXPECT_LT(r.max_rel_cz_vs_fd, 1e-5);
  EXPECT_LT(r.max_abs_rho_minus_one, 1e-12);
}

TEST(Export, ItemsParse) {
  test::TempDir dir("export");
  std::ofstream(dir / "items.tsv") << "cat\ten\t0\tthe cat sat\t1:2\nchat\tfr\t0\tle chat assis\n";
  const auto items = read_export_items(dir / "items.tsv");
  ASSERT_EQ(items.size(), 2u);
  EXPECT_EQ(items[0].span, (Span{1, 2}));
  EXPECT_FALSE(items[1].span);
  EXPECT_EQ(items[1].lang, "fr");
}

TEST(Export, BadItemsAreParseErrors) {
  test::TempDir dir("export");
  std::ofstream(dir / "a.tsv") << "cat\ten\n";
  EXPECT_THROW(read_export_items(dir / "a.tsv"), ParseError);
  std::ofstream(dir / "b.tsv") << "cat\ten\tx\ttext\n";
  EXPECT_THROW(read_export_items(dir / "b.tsv"), ParseError);
  std::ofstream(dir / "c.tsv") << "cat\ten\t0\ttext\t2-3\n";
  EXPECT_THROW(read_export_items(dir / "c.tsv"), ParseError);
}

TEST(Export, RowsHeaderAndDeterminism) {
  test::TempDir dir("export");
  const auto v = Vocab::from_tokens({"a", "b", "##a", "##b"});
  const auto m = small_model(v.size());
  const std::vector<ExportItem> items{{"x", "l1", 0, "ab a", Span{2, 3}}, {"y", "l2", 0, "ba", std::nullopt},
                                      {"z", "l1", 1, "a b", std::nullopt}};
  export_embeddings(m, v, items, dir / "e1.tsv");
  export_embeddings(m, v, items, dir / "e2.tsv");
  const auto body = slurp(dir / "e1.tsv");
  EXPECT_EQ(body, slurp(dir / "e2.tsv"));
  const auto rows = lines_of(body);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].rfind("label\tlang\tgroup\tv0\t", 0), 0u);
  for (const auto& r : rows) EXPECT_EQ(fields(r), 3u + 8u);
  EXPECT_EQ(rows[1].rfind("x\tl1\t0\t", 0), 0u);

  export_embeddings(m, v, {}, dir / "empty.tsv");
  EXPECT_EQ(lines_of(slurp(dir / "empty.tsv")).size(), 1u);
}

TEST(Export, WordRowMatchesDirectEmbedding) {
  test::TempDir dir("export");
  const auto v = Vocab::from_tokens({"a", "b", "##a", "##b"});
  const auto m = small_model(v.size());
  export_embeddings(m, v, {{"x", "l1", 0, "ab a", Span{2, 3}}}, dir / "e.tsv");
  const auto row = lines_of(slurp(dir / "e.tsv"))[1];
  const auto want = embed_word(m, v, WPS{{"ab a", "l1", 0}, "a", {2, 3}, {3, 4}});
  std::istringstream in(row);
  std::string cell;
  for (int k = 0; k < 3; ++k) std::getline(in, cell, '\t');
  for (double w : want) {
    std::getline(in, cell, '\t');
    EXPECT_EQ(std::stod(cell), w);
  }
}

TEST(Ablation, SmallRunShape) {
  const auto s = make_synthetic_setup(30, 12, 8, 2);
  TrainConfig c;
  c.steps = 3;
  c.batch_size = 4;
  c.encoder.layers = 1;
  c.encoder.heads = 2;
  c.encoder.hidden = 8;
  c.encoder.ffn = 16;
  c.encoder.cce_dim = 8;
  const auto r = ablation_suite(s, c);
  EXPECT_EQ(r.rows.size(), 16u);
  EXPECT_EQ(r.reports.size(), 8u);
  for (const auto& sys : {"baseline", "info-snt", "CZ-snt", "ML-CTL-CZ"}) {
    for (auto level : {RetrievalLevel::Sentence, RetrievalLevel::Word}) EXPECT_EQ(r.find(sys, level).items, 8u);
  }
  EXPECT_THROW(r.find("nope", RetrievalLevel::Word), ContractError);

  test::TempDir dir("ablation");
  write_ablation_csv(dir / "a.csv", r);
  const auto rows = lines_of(slurp(dir / "a.csv"));
  ASSERT_EQ(rows.size(), 17u);
  EXPECT_EQ(rows[0], "system,level,direction,top1");
}
