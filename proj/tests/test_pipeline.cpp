#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "charm/pipeline.hpp"
#include "small_config.hpp"
#include "test_util.hpp"

using namespace charm;
using namespace charm::testing;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<nlohmann::json> jsonl(const fs::path& p) {
  std::vector<nlohmann::json> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

void run_all(const RunConfig& c) {
  std::ostringstream sink;
  cmd_gen_data(c, sink);
  cmd_pretrain(c, sink);
  cmd_train(c, sink);
  cmd_index(c, sink);
  cmd_search(c, std::nullopt, sink);
  cmd_eval(c, sink);
  cmd_analyze(c, sink);
}

}  // namespace

TEST(Pipeline, MissingPrerequisitesNameTheProducer) {
  TempDir dir("pipe_missing");
  const auto c = small_run_config((dir.path() / "run").string());
  std::ostringstream sink;
  try {
    cmd_eval(c, sink);
    FAIL() << "expected MissingPrerequisite";
  } catch (const MissingPrerequisite& e) {
    EXPECT_EQ(e.producer(), "index");
    EXPECT_NE(std::string(e.what()).find("index.bin"), std::string::npos);
  }
  try {
    cmd_train(c, sink);
    FAIL() << "expected MissingPrerequisite";
  } catch (const MissingPrerequisite& e) {
    EXPECT_EQ(e.producer(), "gen-data");
  }
  cmd_gen_data(c, sink);
  try {
    cmd_index(c, sink);
    FAIL() << "expected MissingPrerequisite";
  } catch (const MissingPrerequisite& e) {
    EXPECT_EQ(e.producer(), "train");
  }
}

TEST(Pipeline, EndToEndWritesArtifactsDeterministically) {
  TempDir dir("pipe_e2e");
  const auto a = small_run_config((dir.path() / "a").string());
  const auto b = small_run_config((dir.path() / "b").string());
  run_all(a);
  run_all(b);
  const RunPaths pa{a.out_dir}, pb{b.out_dir};
  for (const auto& f : {pa.products(), pa.queries(), pa.vocab(), pa.mlm_checkpoint(), pa.checkpoint(),
                        pa.model_meta(), pa.train_log(), pa.index(), pa.search_results(),
                        pa.report("eval_report", "csv"), pa.report("analysis_report", "jsonl")}) {
    ASSERT_TRUE(fs::exists(f)) << f;
    const auto rel = fs::relative(f, pa.root);
    EXPECT_EQ(slurp(f), slurp(pb.root / rel)) << rel;
  }
  EXPECT_TRUE(fs::exists(pa.effective_config("train")));
  EXPECT_EQ(RunConfig::load(pa.effective_config("train")), a);

  const auto results = jsonl(pa.search_results());
  ASSERT_EQ(results.size(), 20u * a.k_final);
  EXPECT_EQ(results[0]["rank"], 1);

  const auto meta = ModelMeta::from_json(slurp(pa.model_meta()));
  EXPECT_EQ(meta.schema, a.schema);
  EXPECT_EQ(meta.mask_variant, MaskVariant::BlockTriangular);

  bool saw_recall = false;
  for (const auto& row : jsonl(pa.report("eval_report", "jsonl"))) {
    if (row["metric"] == "recall@10" && row["key"] == "two_stage") {
      saw_recall = true;
      EXPECT_GE(row["value"].get<double>(), 0.0);
      EXPECT_LE(row["value"].get<double>(), 1.0);
    }
  }
  EXPECT_TRUE(saw_recall);
}

TEST(Pipeline, AblateWithoutFlagsGivesZeroDeltas) {
  TempDir dir("pipe_ablate");
  auto c = small_run_config((dir.path() / "run").string());
  c.train.epochs = 1;
  c.mlm.steps = 0;
  std::ostringstream sink;
  cmd_gen_data(c, sink);
  cmd_ablate(c, sink);
  std::size_t deltas = 0;
  for (const auto& row : jsonl(RunPaths{c.out_dir}.report("ablate_report", "jsonl"))) {
    const std::string metric = row["metric"];
    if (metric.rfind("delta_", 0) == 0) {
      ++deltas;
      EXPECT_EQ(row["value"].get<double>(), 0.0) << metric;
    }
  }
  EXPECT_EQ(deltas, 15u);
}

TEST(Pipeline, ApplyVariantResetsOtherFlags) {
  RunConfig c;
  c.ablation.zero_lambda_agg = true;
  c.ablation.diagonal_attention = true;
  const auto base = apply_variant(c, "base");
  EXPECT_TRUE(base.ablation.active().empty());
  const auto v = apply_variant(c, "zero_lambda_max");
  EXPECT_EQ(v.ablation.active(), (std::vector<std::string>{"zero_lambda_max"}));
  EXPECT_THROW(apply_variant(c, "nope"), ConfigError);
}

TEST(Pipeline, ModelMetaRoundTrip) {
  RunConfig c;
  c.ablation.asym_encoders = true;
  const auto m = ModelMeta::from_config(c);
  const auto back = ModelMeta::from_json(m.to_json());
  EXPECT_EQ(back.mode, RepresentationMode::AsymCls);
  EXPECT_EQ(back.schema, m.schema);
  EXPECT_EQ(back.query_max_len, m.query_max_len);
}
