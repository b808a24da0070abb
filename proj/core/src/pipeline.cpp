#include "charm/pipeline.hpp"

#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "charm/error.hpp"

namespace charm {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

RunPaths paths_of(const RunConfig& config) { return RunPaths{fs::path(config.out_dir)}; }

void require(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) throw MissingPrerequisite(path, producer);
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void begin_command(const RunConfig& config, const std::string& command) {
  config.validate();
  const auto p = paths_of(config);
  fs::create_directories(p.root);
  open_out(p.effective_config(command)) << config.to_json();
}

void write_reports(const RunPaths& p, const std::string& stem, const std::string& title,
                   const std::vector<ReportRow>& rows, std::ostream& out) {
  {
    auto f = open_out(p.report(stem, "txt"));
    write_table(f, title, rows);
  }
  {
    auto f = open_out(p.report(stem, "jsonl"));
    write_jsonl(f, rows);
  }
  {
    auto f = open_out(p.report(stem, "csv"));
    write_csv(f, rows);
  }
  write_table(out, title, rows);
}

Dataset split(FieldSchema schema, Corpus corpus, const RunConfig& config) {
  Dataset d;
  d.schema = std::move(schema);
  auto [train, test] = split_queries(corpus.queries, config.n_test_queries);
  d.train = std::move(train);
  d.test = std::move(test);
  d.corpus = std::move(corpus);
  return d;
}

struct LoadedModel {
  ModelMeta meta;
  Encoder encoder;
};

LoadedModel load_model(const RunPaths& p) {
  require(p.checkpoint(), "train");
  require(p.model_meta(), "train");
  require(p.vocab(), "train");
  auto meta = ModelMeta::from_json(read_text(p.model_meta()));
  auto weights = EncoderWeights<float>::load(p.checkpoint());
  Encoder enc(std::move(weights), Vocabulary::load(p.vocab()), FieldSchema(meta.schema),
              meta.mask_variant, meta.mode, meta.product_max_len, meta.query_max_len);
  return {std::move(meta), std::move(enc)};
}

TwoTierIndex load_index(const RunPaths& p) {
  require(p.index(), "index");
  return TwoTierIndex::load(p.index());
}

}  // namespace

Dataset synthesize_dataset(const RunConfig& config) {
  const auto schema = config.data_schema();
  return split(schema, generate_synthetic_corpus(config.synthesis_params(), schema), config);
}

Dataset load_dataset(const RunConfig& config) {
  const auto schema = config.data_schema();
  if (config.data) {
    return split(schema, load_corpus(config.data->products, config.data->queries, schema), config);
  }
  const auto p = paths_of(config);
  require(p.products(), "gen-data");
  require(p.queries(), "gen-data");
  return split(schema, load_corpus(p.products(), p.queries(), schema), config);
}

Vocabulary build_vocabulary(const Dataset& data, const RunConfig& config) {
  return Vocabulary::build(data.corpus.products, data.train, config.model_schema());
}

EncoderWeights<float> initial_weights(const RunConfig& config, const Vocabulary& vocab) {
  auto c = config.encoder;
  c.vocab_size = vocab.size();
  c.n_fields = config.schema.size();
  return EncoderWeights<float>::init(c, config.seed);
}

std::string ModelMeta::to_json() const {
  Json j;
  j["schema"] = schema;
  j["mask_variant"] = std::string(to_string(mask_variant));
  j["representation_mode"] = std::string(to_string(mode));
  j["product_max_len"] = product_max_len;
  j["query_max_len"] = query_max_len;
  return j.dump(2) + "\n";
}

ModelMeta ModelMeta::from_json(const std::string& text) {
  ModelMeta m;
  try {
    const auto j = nlohmann::json::parse(text);
    m.schema = j.at("schema").get<std::vector<std::string>>();
    m.mask_variant = parse_mask_variant(j.at("mask_variant").get<std::string>());
    m.mode = parse_representation_mode(j.at("representation_mode").get<std::string>());
    m.product_max_len = j.at("product_max_len").get<std::size_t>();
    m.query_max_len = j.at("query_max_len").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model metadata: ") + e.what());
  }
  return m;
}

ModelMeta ModelMeta::from_config(const RunConfig& config) {
  ModelMeta m;
  m.schema = config.model_schema().names();
  m.mask_variant = config.effective_mask();
  m.mode = config.effective_mode();
  m.product_max_len = config.train.product_max_len;
  m.query_max_len = config.train.query_max_len;
  return m;
}

Experiment run_experiment(const RunConfig& config, const Dataset& data, const Vocabulary& vocab,
                          const std::optional<EncoderWeights<float>>& init) {
  config.validate();
  const auto schema = config.model_schema();
  auto weights = init ? *init : initial_weights(config, vocab);
  auto trained = train(data.corpus.products, data.train, schema, vocab, std::move(weights),
                       config.train_config());
  const auto meta = ModelMeta::from_config(config);
  Encoder encoder(trained.weights, vocab, schema, meta.mask_variant, meta.mode,
                  meta.product_max_len, meta.query_max_len);
  auto index = TwoTierIndex::build(encoder, data.corpus.products);
  auto queries = encoder.encode_queries(data.test).aggregated;
  auto report = evaluate(index, queries, data.test, config.k_shortlist);
  return Experiment{std::move(trained), std::move(encoder), std::move(index), std::move(queries),
                    std::move(report)};
}

RunConfig apply_variant(RunConfig base, const std::string& variant) {
  base.ablation = AblationFlags{};
  if (variant != "base") base.ablation.set(variant);
  return base;
}

void cmd_gen_data(const RunConfig& config, std::ostream& out) {
  begin_command(config, "gen-data");
  const auto p = paths_of(config);
  Dataset d = config.data ? load_dataset(config) : synthesize_dataset(config);
  fs::create_directories(p.products().parent_path());
  save_products(p.products(), d.corpus.products, d.schema);
  save_queries(p.queries(), d.corpus.queries);
  out << "gen-data: " << d.corpus.products.size() << " products, " << d.corpus.queries.size()
      << " queries (" << d.train.size() << " train, " << d.test.size() << " test) -> "
      << p.products().parent_path().string() << '\n';
}

void cmd_pretrain(const RunConfig& config, std::ostream& out) {
  begin_command(config, "pretrain");
  const auto p = paths_of(config);
  const auto data = load_dataset(config);
  const auto vocab = build_vocabulary(data, config);
  vocab.save(p.vocab());
  auto result = mlm_pretrain(data.corpus.products, config.model_schema(), vocab,
                             initial_weights(config, vocab), config.mlm_config());
  result.weights.save(p.mlm_checkpoint());
  auto log = open_out(p.mlm_log());
  for (const auto& r : result.log) log << r.to_json() << '\n';
  out << "pretrain: " << result.log.size() << " steps";
  if (!result.log.empty()) out << ", final loss " << result.log.back().loss;
  out << " -> " << p.mlm_checkpoint().string() << '\n';
}

void cmd_train(const RunConfig& config, std::ostream& out) {
  begin_command(config, "train");
  const auto p = paths_of(config);
  const auto data = load_dataset(config);
  const auto vocab = build_vocabulary(data, config);
  vocab.save(p.vocab());
  std::optional<EncoderWeights<float>> init;
  if (!config.ablation.skip_mlm && fs::exists(p.mlm_checkpoint())) {
    init = EncoderWeights<float>::load(p.mlm_checkpoint());
    if (init->config.vocab_size != vocab.size() || init->config.n_fields != config.schema.size()) {
      throw ConfigError("train: '" + p.mlm_checkpoint().string() +
                        "' was pretrained on a different vocabulary; rerun `pretrain`");
    }
  }
  const bool from_mlm = init.has_value();
  if (!init) init = initial_weights(config, vocab);
  TrainResult result;
  try {
    result = train(data.corpus.products, data.train, config.model_schema(), vocab, std::move(*init),
                   config.train_config());
  } catch (const TrainingAborted& e) {
    e.last_good().save(p.checkpoint());
    open_out(p.model_meta()) << ModelMeta::from_config(config).to_json();
    throw;
  }
  result.weights.save(p.checkpoint());
  open_out(p.model_meta()) << ModelMeta::from_config(config).to_json();
  auto log = open_out(p.train_log());
  for (const auto& r : result.log) log << r.to_json() << '\n';
  out << "train: " << result.log.size() << " steps from " << (from_mlm ? "mlm checkpoint" : "random init");
  if (!result.log.empty()) out << ", final loss " << result.log.back().total;
  out << " -> " << p.checkpoint().string() << '\n';
}

void cmd_index(const RunConfig& config, std::ostream& out) {
  begin_command(config, "index");
  const auto p = paths_of(config);
  auto model = load_model(p);
  const auto data = load_dataset(config);
  const auto index = TwoTierIndex::build(model.encoder, data.corpus.products);
  index.save(p.index());
  out << "index: M=" << index.size() << " d=" << index.dim() << " |F|=" << index.n_fields()
      << " -> " << p.index().string() << '\n';
}

void cmd_search(const RunConfig& config, const std::optional<fs::path>& queries_path,
                std::ostream& out) {
  begin_command(config, "search");
  const auto p = paths_of(config);
  const auto index = load_index(p);
  auto model = load_model(p);
  std::vector<QueryRecord> queries;
  if (queries_path) {
    queries = load_queries(*queries_path);
  } else {
    queries = load_dataset(config).test;
  }
  const auto vectors = model.encoder.encode_queries(queries).aggregated;
  const auto before = index.comparisons();
  auto f = open_out(p.search_results());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto r = index.two_stage_search(vectors.row(i), config.k_shortlist, config.k_final);
    write_results_jsonl(f, queries[i].query_id, r);
  }
  out << "search: " << queries.size() << " queries, "
      << comparison_budget(before, index.comparisons()) << " comparisons -> "
      << p.search_results().string() << '\n';
}

void cmd_eval(const RunConfig& config, std::ostream& out) {
  begin_command(config, "eval");
  const auto p = paths_of(config);
  const auto index = load_index(p);
  auto model = load_model(p);
  const auto data = load_dataset(config);
  const auto vectors = model.encoder.encode_queries(data.test).aggregated;
  const auto report = evaluate(index, vectors, data.test, config.k_shortlist);
  {
    auto f = open_out(p.report("eval_per_query", "jsonl"));
    for (const auto& [mode, m] : report.modes) {
      for (const auto& q : m.per_query) {
        Json j;
        j["mode"] = std::string(to_string(mode));
        j["query_id"] = q.query_id;
        j["recall@10"] = q.recall10;
        j["recall@100"] = q.recall100;
        j["ndcg@50"] = q.ndcg50;
        j["precision@5"] = q.precision5;
        j["precision@10"] = q.precision10;
        f << j.dump() << '\n';
      }
    }
  }
  write_reports(p, "eval_report",
                "evaluation over " + std::to_string(report.n_queries) + " test queries",
                metric_rows(report), out);
}

void cmd_analyze(const RunConfig& config, std::ostream& out) {
  begin_command(config, "analyze");
  const auto p = paths_of(config);
  const auto index = load_index(p);
  auto model = load_model(p);
  const auto data = load_dataset(config);
  const auto& names = model.meta.schema;
  const std::size_t nf = names.size();
  const auto vectors = model.encoder.encode_queries(data.test).aggregated;

  std::vector<RankedResult> results;
  {
    auto f = open_out(p.report("analysis_results", "jsonl"));
    for (std::size_t i = 0; i < data.test.size(); ++i) {
      results.push_back(index.two_stage_search(vectors.row(i), config.k_shortlist, config.k_shortlist));
      write_results_jsonl(f, data.test[i].query_id, results.back());
    }
  }

  auto rows = diversity_rows(diversity_report(index, config.analysis.diversity_max_pairs, config.seed),
                             names);
  const auto hist = match_field_histogram(results, nf, config.analysis.histogram_k);
  for (std::size_t f = 0; f < nf; ++f) {
    rows.push_back({"match_field_count", names[f], static_cast<double>(hist[f])});
  }
  for (const auto& [n, c] : fields_per_query_histogram(results, config.analysis.histogram_k)) {
    rows.push_back({"fields_per_query", std::to_string(n), static_cast<double>(c)});
  }
  const auto lengths = query_length_by_field(results, data.test, nf);
  for (std::size_t f = 0; f < nf; ++f) rows.push_back({"query_length", names[f], lengths[f]});

  std::map<std::string, std::string> types;
  std::vector<std::string> type_rows;
  for (const auto& pr : data.corpus.products) {
    types[pr.product_id] = pr.product_type.value_or("");
    type_rows.push_back(pr.product_type.value_or(""));
  }
  const auto entropy = match_entropy_curve(results, types, config.analysis.entropy_ks);
  for (std::size_t i = 0; i < entropy.size(); ++i) {
    rows.push_back({"match_entropy", "k=" + std::to_string(config.analysis.entropy_ks[i]), entropy[i]});
  }
  const auto pres = preservation_curve(index, vectors, config.analysis.shortlist_sizes,
                                       config.analysis.preservation_ks);
  for (std::size_t s = 0; s < pres.size(); ++s) {
    for (std::size_t k = 0; k < pres[s].size(); ++k) {
      rows.push_back({"preservation",
                      "s=" + std::to_string(config.analysis.shortlist_sizes[s]) +
                          ",k=" + std::to_string(config.analysis.preservation_ks[k]),
                      pres[s][k]});
    }
  }
  if (index.weights().numel() != 0) {
    for (std::size_t f = 0; f < nf; ++f) {
      for (const auto& [type, w] : aggregation_weight_by_type(index.weights(), type_rows, f)) {
        rows.push_back({"aggregation_weight", names[f] + "/" + type, w});
      }
    }
  }
  write_reports(p, "analysis_report", "analysis over " + std::to_string(data.test.size()) + " test queries",
                rows, out);
}

void cmd_ablate(const RunConfig& config, std::ostream& out) {
  begin_command(config, "ablate");
  const auto p = paths_of(config);
  const auto data = load_dataset(config);

  std::vector<std::string> variants = {"base"};
  for (const auto& v : config.ablation.active()) variants.push_back(v);

  const auto base_config = apply_variant(config, "base");
  const auto vocab = build_vocabulary(data, base_config);
  std::optional<EncoderWeights<float>> mlm;
  const bool need_mlm = variants.size() == 1 || variants.size() > 2 || variants[1] != "skip_mlm";
  if (need_mlm && fs::exists(p.mlm_checkpoint())) {
    mlm = EncoderWeights<float>::load(p.mlm_checkpoint());
    if (mlm->config.vocab_size != vocab.size()) {
      throw ConfigError("ablate: '" + p.mlm_checkpoint().string() +
                        "' was pretrained on a different vocabulary; rerun `pretrain`");
    }
  } else if (need_mlm && config.mlm.steps > 0) {
    mlm = mlm_pretrain(data.corpus.products, base_config.model_schema(), vocab,
                       initial_weights(base_config, vocab), base_config.mlm_config())
              .weights;
  }

  std::map<std::string, std::vector<ReportRow>> by_variant;
  for (const auto& v : variants) {
    const auto vc = apply_variant(config, v);
    std::optional<EncoderWeights<float>> init;
    // Pretraining runs on the base field order; a reordered variant starts from it too.
    if (v != "skip_mlm") init = mlm;
    const auto vocab_v = build_vocabulary(data, vc);
    if (!(vocab_v == vocab)) init.reset();
    out << "ablate: training variant " << v << '\n';
    const auto e = run_experiment(vc, data, vocab_v, init);
    by_variant[v] = metric_rows(e.report);
  }

  std::vector<ReportRow> rows;
  const auto& base = by_variant.at("base");
  for (const auto& v : variants) {
    const auto& vr = by_variant.at(v);
    for (std::size_t i = 0; i < vr.size(); ++i) {
      rows.push_back({vr[i].metric, v + "/" + vr[i].key, vr[i].value});
    }
  }
  const std::size_t first_delta = variants.size() == 1 ? 0 : 1;
  for (std::size_t vi = first_delta; vi < variants.size(); ++vi) {
    const auto& vr = by_variant.at(variants[vi]);
    for (std::size_t i = 0; i < vr.size(); ++i) {
      rows.push_back({"delta_" + vr[i].metric, variants[vi] + "/" + vr[i].key, vr[i].value - base[i].value});
    }
  }
  write_reports(p, "ablate_report", "ablation deltas against base", rows, out);
}

}  // namespace charm
