#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <utility>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "charm/error.hpp"
#include "charm/pipeline.hpp"
#include "charm/run_config.hpp"

namespace {

struct Overrides {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> products;
  std::optional<std::string> data_queries;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> lr;
  std::optional<std::size_t> mlm_steps;
  std::optional<std::size_t> k_shortlist;
  std::optional<std::size_t> k_final;
  std::optional<std::string> queries;
  std::map<std::string, bool> flags;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "run config JSON");
  cmd->add_option("--seed", o.seed, "run seed");
  cmd->add_option("--out-dir", o.out_dir, "run directory");
  cmd->add_option("--products", o.products, "products JSONL (instead of synthesis)");
  cmd->add_option("--data-queries", o.data_queries, "queries JSONL (instead of synthesis)");
  cmd->add_option("--epochs", o.epochs);
  cmd->add_option("--batch-size", o.batch_size);
  cmd->add_option("--lr", o.lr);
  cmd->add_option("--mlm-steps", o.mlm_steps);
  cmd->add_option("--k-shortlist", o.k_shortlist);
  cmd->add_option("--k-final", o.k_final);
  for (const auto& name : charm::AblationFlags::names()) {
    std::string opt = "--" + name;
    for (auto& c : opt) {
      if (c == '_') c = '-';
    }
    cmd->add_flag_callback(opt, [&o, name] { o.flags[name] = true; }, "ablation: " + name);
  }
}

charm::RunConfig resolve(const Overrides& o) {
  charm::RunConfig c = o.config ? charm::RunConfig::load(*o.config) : charm::RunConfig{};
  if (o.seed) c.seed = *o.seed;
  if (o.out_dir) c.out_dir = *o.out_dir;
  if (o.products || o.data_queries) {
    if (!o.products || !o.data_queries) {
      throw charm::ConfigError("--products and --data-queries must be given together");
    }
    c.data = charm::DataPaths{*o.products, *o.data_queries};
    c.synthesis.reset();
  }
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (o.lr) c.train.lr = *o.lr;
  if (o.mlm_steps) c.mlm.steps = *o.mlm_steps;
  if (o.k_shortlist) c.k_shortlist = *o.k_shortlist;
  if (o.k_final) c.k_final = *o.k_final;
  for (const auto& [name, v] : o.flags) c.ablation.set(name, v);
  c.validate();
  return c;
}

int fail(const std::string& kind, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["message"] = message;
  std::cerr << j.dump() << '\n';
  return kind == "usage" ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"charm: hierarchical multi-field product retrieval"};
  app.require_subcommand(1, 1);
  Overrides o;
  std::map<std::string, CLI::App*> cmds;
  const std::pair<const char*, const char*> commands[] = {
      {"gen-data", "write the synthetic corpus to <out-dir>/data"},
      {"pretrain", "masked-token pretraining, writes mlm.ckpt"},
      {"train", "contrastive training, writes model.ckpt"},
      {"index", "encode all products, writes index.bin"},
      {"search", "two-stage search, writes search_results.jsonl"},
      {"eval", "metrics for the aggregated, best-field and two-stage modes"},
      {"analyze", "diversity, match-field, entropy and preservation reports"},
      {"ablate", "train base plus each flagged variant and report deltas"},
  };
  for (const auto& [name, help] : commands) {
    cmds[name] = app.add_subcommand(name, help);
    add_common(cmds[name], o);
  }
  cmds["search"]->add_option("--queries", o.queries, "queries JSONL (default: test split)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  try {
    const auto config = resolve(o);
    auto& out = std::cout;
    if (*cmds["gen-data"]) charm::cmd_gen_data(config, out);
    else if (*cmds["pretrain"]) charm::cmd_pretrain(config, out);
    else if (*cmds["train"]) charm::cmd_train(config, out);
    else if (*cmds["index"]) charm::cmd_index(config, out);
    else if (*cmds["search"]) {
      std::optional<std::filesystem::path> q;
      if (o.queries) q = *o.queries;
      charm::cmd_search(config, q, out);
    } else if (*cmds["eval"]) charm::cmd_eval(config, out);
    else if (*cmds["analyze"]) charm::cmd_analyze(config, out);
    else if (*cmds["ablate"]) charm::cmd_ablate(config, out);
  } catch (const charm::MissingPrerequisite& e) {
    return fail("missing_prerequisite", e.what());
  } catch (const charm::ConfigError& e) {
    return fail("config", e.what());
  } catch (const charm::TrainingAborted& e) {
    return fail("training_aborted", e.what());
  } catch (const charm::ParseError& e) {
    return fail("parse", e.what());
  } catch (const charm::IoError& e) {
    return fail("io", e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
