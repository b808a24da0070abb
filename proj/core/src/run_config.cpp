#include "charm/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "charm/error.hpp"

namespace charm {

using Json = nlohmann::ordered_json;

const std::vector<std::string>& AblationFlags::names() {
  static const std::vector<std::string> n = {
      "diagonal_attention", "full_attention", "add_div_loss",    "zero_lambda_agg",
      "zero_lambda_fields", "zero_lambda_max", "asym_encoders", "alt_field_order",
      "skip_mlm",           "bibert"};
  return n;
}

namespace {

bool* flag_ptr(AblationFlags& f, const std::string& name) {
  if (name == "diagonal_attention") return &f.diagonal_attention;
  if (name == "full_attention") return &f.full_attention;
  if (name == "add_div_loss") return &f.add_div_loss;
  if (name == "zero_lambda_agg") return &f.zero_lambda_agg;
  if (name == "zero_lambda_fields") return &f.zero_lambda_fields;
  if (name == "zero_lambda_max") return &f.zero_lambda_max;
  if (name == "asym_encoders") return &f.asym_encoders;
  if (name == "alt_field_order") return &f.alt_field_order;
  if (name == "skip_mlm") return &f.skip_mlm;
  if (name == "bibert") return &f.bibert;
  return nullptr;
}

}  // namespace

std::vector<std::string> AblationFlags::active() const {
  std::vector<std::string> out;
  auto copy = *this;
  for (const auto& n : names()) {
    if (*flag_ptr(copy, n)) out.push_back(n);
  }
  return out;
}

void AblationFlags::set(const std::string& name, bool value) {
  bool* p = flag_ptr(*this, name);
  if (!p) throw ConfigError("unknown ablation flag '" + name + "'");
  *p = value;
}

namespace {

// Reads an object and rejects keys that are never fetched.
class Reader {
 public:
  Reader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return nullptr;
    return &j_.at(key);
  }

  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  const std::string& where() const { return where_; }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

Json synthesis_json(const SynthesisParams& s) {
  Json j;
  j["n_products"] = s.n_products;
  j["n_queries"] = s.n_queries;
  j["branching"] = s.branching;
  j["filler_vocab"] = s.filler_vocab;
  j["max_substitutes"] = s.max_substitutes;
  j["max_irrelevant"] = s.max_irrelevant;
  j["shallow_label_rate"] = s.shallow_label_rate;
  return j;
}

}  // namespace

std::string RunConfig::to_json() const {
  Json j;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["schema"] = schema;
  if (data) {
    j["data"] = Json{{"products", data->products}, {"queries", data->queries}};
  } else {
    j["data"] = nullptr;
  }
  j["synthesis"] = synthesis ? synthesis_json(*synthesis) : Json(nullptr);
  j["n_test_queries"] = n_test_queries;
  j["encoder"] = Json{{"n_layers", encoder.n_layers},
                      {"n_heads", encoder.n_heads},
                      {"model_dim", encoder.model_dim},
                      {"ffn_dim", encoder.ffn_dim},
                      {"max_positions", encoder.max_positions},
                      {"layer_norm_eps", encoder.layer_norm_eps}};
  j["loss"] = Json{{"lambda_agg", loss.lambda_agg},
                   {"lambda_fields", loss.lambda_fields},
                   {"lambda_max", loss.lambda_max},
                   {"lambda_div", loss.lambda_div},
                   {"tau", loss.tau}};
  j["train"] = Json{{"epochs", train.epochs},
                    {"batch_size", train.batch_size},
                    {"lr", train.lr},
                    {"warmup_ratio", train.warmup_ratio},
                    {"clip_norm", train.clip_norm},
                    {"product_max_len", train.product_max_len},
                    {"query_max_len", train.query_max_len},
                    {"hard_negatives", train.hard_negatives}};
  j["mlm"] = Json{{"steps", mlm.steps},
                  {"batch_size", mlm.batch_size},
                  {"lr", mlm.lr},
                  {"mask_rate", mlm.mask_rate}};
  j["mask_variant"] = std::string(to_string(mask_variant));
  Json flags = Json::object();
  auto copy = ablation;
  for (const auto& n : AblationFlags::names()) flags[n] = *flag_ptr(copy, n);
  j["ablation"] = flags;
  j["alt_field_order"] = alt_field_order;
  j["retrieval"] = Json{{"k_shortlist", k_shortlist}, {"k_final", k_final}};
  j["analysis"] = Json{{"shortlist_sizes", analysis.shortlist_sizes},
                       {"preservation_ks", analysis.preservation_ks},
                       {"entropy_ks", analysis.entropy_ks},
                       {"histogram_k", analysis.histogram_k},
                       {"diversity_max_pairs", analysis.diversity_max_pairs}};
  return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig c;
  {
    Reader r(j, "config");
    r.get("seed", c.seed);
    r.get("out_dir", c.out_dir);
    r.get("schema", c.schema);
    if (const auto* d = r.child("data")) {
      Reader dr(*d, "config.data");
      DataPaths p;
      dr.get("products", p.products);
      dr.get("queries", p.queries);
      c.data = p;
    }
    const bool synth_given = r.has("synthesis");
    if (const auto* s = r.child("synthesis")) {
      Reader sr(*s, "config.synthesis");
      SynthesisParams p;
      sr.get("n_products", p.n_products);
      sr.get("n_queries", p.n_queries);
      sr.get("branching", p.branching);
      sr.get("filler_vocab", p.filler_vocab);
      sr.get("max_substitutes", p.max_substitutes);
      sr.get("max_irrelevant", p.max_irrelevant);
      sr.get("shallow_label_rate", p.shallow_label_rate);
      c.synthesis = p;
    } else if (c.data || (j.contains("synthesis") && !synth_given)) {
      c.synthesis.reset();
    }
    r.get("n_test_queries", c.n_test_queries);
    if (const auto* e = r.child("encoder")) {
      Reader er(*e, "config.encoder");
      er.get("n_layers", c.encoder.n_layers);
      er.get("n_heads", c.encoder.n_heads);
      er.get("model_dim", c.encoder.model_dim);
      er.get("ffn_dim", c.encoder.ffn_dim);
      er.get("max_positions", c.encoder.max_positions);
      er.get("layer_norm_eps", c.encoder.layer_norm_eps);
    }
    if (const auto* l = r.child("loss")) {
      Reader lr(*l, "config.loss");
      lr.get("lambda_agg", c.loss.lambda_agg);
      lr.get("lambda_fields", c.loss.lambda_fields);
      lr.get("lambda_max", c.loss.lambda_max);
      lr.get("lambda_div", c.loss.lambda_div);
      lr.get("tau", c.loss.tau);
    }
    if (const auto* t = r.child("train")) {
      Reader tr(*t, "config.train");
      tr.get("epochs", c.train.epochs);
      tr.get("batch_size", c.train.batch_size);
      tr.get("lr", c.train.lr);
      tr.get("warmup_ratio", c.train.warmup_ratio);
      tr.get("clip_norm", c.train.clip_norm);
      tr.get("product_max_len", c.train.product_max_len);
      tr.get("query_max_len", c.train.query_max_len);
      tr.get("hard_negatives", c.train.hard_negatives);
    }
    if (const auto* m = r.child("mlm")) {
      Reader mr(*m, "config.mlm");
      mr.get("steps", c.mlm.steps);
      mr.get("batch_size", c.mlm.batch_size);
      mr.get("lr", c.mlm.lr);
      mr.get("mask_rate", c.mlm.mask_rate);
    }
    std::string variant(to_string(c.mask_variant));
    r.get("mask_variant", variant);
    c.mask_variant = parse_mask_variant(variant);
    if (const auto* a = r.child("ablation")) {
      Reader ar(*a, "config.ablation");
      for (const auto& n : AblationFlags::names()) {
        bool v = false;
        ar.get(n.c_str(), v);
        c.ablation.set(n, v);
      }
    }
    r.get("alt_field_order", c.alt_field_order);
    if (const auto* k = r.child("retrieval")) {
      Reader kr(*k, "config.retrieval");
      kr.get("k_shortlist", c.k_shortlist);
      kr.get("k_final", c.k_final);
    }
    if (const auto* an = r.child("analysis")) {
      Reader ar(*an, "config.analysis");
      ar.get("shortlist_sizes", c.analysis.shortlist_sizes);
      ar.get("preservation_ks", c.analysis.preservation_ks);
      ar.get("entropy_ks", c.analysis.entropy_ks);
      ar.get("histogram_k", c.analysis.histogram_k);
      ar.get("diversity_max_pairs", c.analysis.diversity_max_pairs);
    }
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

void RunConfig::validate() const {
  if (data.has_value() == synthesis.has_value()) {
    throw ConfigError("config: set exactly one of 'data' and 'synthesis'");
  }
  if (data && (data->products.empty() || data->queries.empty())) {
    throw ConfigError("config: data needs both 'products' and 'queries' paths");
  }
  (void)data_schema();
  (void)model_schema();
  if (ablation.diagonal_attention && ablation.full_attention) {
    throw ConfigError("config: diagonal_attention and full_attention are mutually exclusive");
  }
  if ((ablation.diagonal_attention || ablation.full_attention) &&
      mask_variant != MaskVariant::BlockTriangular) {
    throw ConfigError("config: an attention ablation flag conflicts with mask_variant");
  }
  if (ablation.bibert && (ablation.diagonal_attention || ablation.asym_encoders)) {
    throw ConfigError("config: bibert conflicts with diagonal_attention and asym_encoders");
  }
  if (k_shortlist == 0 || k_final == 0 || k_final > k_shortlist) {
    throw ConfigError("config: need 1 <= k_final <= k_shortlist");
  }
  if (train.product_max_len > encoder.max_positions || train.query_max_len > encoder.max_positions) {
    throw ConfigError("config: encoder.max_positions must cover the tokenizer max lengths");
  }
  auto e = encoder;
  e.vocab_size = 1;
  e.n_fields = schema.size();
  e.validate();
  effective_loss().validate();
  train_config().validate();
  mlm_config().validate();
}

FieldSchema RunConfig::data_schema() const { return FieldSchema(schema); }

FieldSchema RunConfig::model_schema() const {
  FieldSchema s(schema);
  if (!ablation.alt_field_order) return s;
  if (alt_field_order.empty()) {
    std::vector<std::string> rev(schema.rbegin(), schema.rend());
    return s.reordered(rev);
  }
  return s.reordered(alt_field_order);
}

MaskVariant RunConfig::effective_mask() const {
  if (ablation.diagonal_attention) return MaskVariant::BlockDiagonal;
  if (ablation.full_attention || ablation.bibert) return MaskVariant::Full;
  return mask_variant;
}

RepresentationMode RunConfig::effective_mode() const {
  if (ablation.bibert) return RepresentationMode::BiBert;
  if (ablation.asym_encoders) return RepresentationMode::AsymCls;
  return RepresentationMode::Charm;
}

LossWeights RunConfig::effective_loss() const {
  auto l = loss;
  if (ablation.zero_lambda_agg) l.lambda_agg = 0;
  if (ablation.zero_lambda_fields) l.lambda_fields = 0;
  if (ablation.zero_lambda_max) l.lambda_max = 0;
  if (ablation.add_div_loss && l.lambda_div == 0) l.lambda_div = kDefaultDivWeight;
  return l;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.epochs = train.epochs;
  t.batch_size = train.batch_size;
  t.lr = train.lr;
  t.warmup_ratio = train.warmup_ratio;
  t.clip_norm = train.clip_norm;
  t.seed = seed;
  t.mask_variant = effective_mask();
  t.mode = effective_mode();
  t.loss = effective_loss();
  t.product_max_len = train.product_max_len;
  t.query_max_len = train.query_max_len;
  t.hard_negatives = train.hard_negatives;
  return t;
}

MlmConfig RunConfig::mlm_config() const {
  MlmConfig m;
  m.steps = mlm.steps;
  m.batch_size = mlm.batch_size;
  m.lr = mlm.lr;
  m.mask_rate = mlm.mask_rate;
  m.warmup_ratio = train.warmup_ratio;
  m.clip_norm = train.clip_norm;
  m.seed = seed;
  m.mask_variant = effective_mask();
  m.max_len = train.product_max_len;
  return m;
}

SynthesisParams RunConfig::synthesis_params() const {
  if (!synthesis) throw ConfigError("config: no synthesis parameters");
  auto s = *synthesis;
  s.seed = seed;
  return s;
}

}  // namespace charm
