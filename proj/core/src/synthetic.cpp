#include <algorithm>
#include <cctype>
#include <cstdio>
#include <set>
#include <sstream>

#include "charm/corpus.hpp"
#include "charm/error.hpp"

namespace charm {
namespace {

constexpr std::size_t kMaxQueryAttempts = 64;

const std::vector<std::string>& product_types() {
  static const std::vector<std::string> types = {"apparel", "books", "electronics",
                                                 "home",    "toys",  "sports"};
  return types;
}

std::vector<std::size_t> default_branching(std::size_t n_fields) {
  std::vector<std::size_t> b(n_fields, 4);
  b[0] = 16;
  if (n_fields == 2) b[1] = 6;
  return b;
}

std::string token_prefix(const std::string& field_name) {
  std::string out;
  for (unsigned char c : field_name) {
    if (std::isalnum(c)) out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out.empty() ? std::string("f") : out;
}

std::string label_token(const std::string& prefix, std::size_t label) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02zu", label);
  return prefix + buf;
}

std::string filler_token(const std::string& prefix, std::size_t j) {
  return prefix + "x" + std::to_string(j);
}

std::string numbered_id(char tag, std::size_t i) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%c%05zu", tag, i);
  return buf;
}

std::vector<std::string> words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

bool agrees_on(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b,
               const std::vector<std::size_t>& levels) {
  for (const auto f : levels) {
    if (a[f] != b[f]) return false;
  }
  return true;
}

// Uniform sample of at most `limit` items, returned in ascending order.
std::vector<std::size_t> sample_sorted(std::vector<std::size_t> pool, std::size_t limit, Rng& rng) {
  rng.shuffle(pool);
  if (pool.size() > limit) pool.resize(limit);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace

Corpus generate_synthetic_corpus(const SynthesisParams& params, const FieldSchema& schema) {
  if (params.n_products == 0 || params.n_queries == 0) {
    throw ConfigError("synthetic corpus needs at least one product and one query");
  }
  if (params.n_queries > params.n_products) {
    throw ConfigError("synthetic corpus needs n_products >= n_queries");
  }
  if (schema.size() == 0) throw ConfigError("synthetic corpus needs a non-empty schema");
  if (!(params.shallow_label_rate >= 0 && params.shallow_label_rate <= 1)) {
    throw ConfigError("shallow_label_rate must lie in [0, 1]");
  }
  const std::size_t n_fields = schema.size();
  const auto branching = params.branching.empty() ? default_branching(n_fields) : params.branching;
  if (branching.size() != n_fields) {
    throw ConfigError("branching must list one label count per field");
  }
  if (std::any_of(branching.begin(), branching.end(), [](std::size_t b) { return b == 0; })) {
    throw ConfigError("branching entries must be positive");
  }

  std::vector<std::string> prefixes;
  for (const auto& name : schema.names()) prefixes.push_back(token_prefix(name));

  Rng rng(params.seed);
  Rng path_rng = rng.fork(1);
  Rng filler_rng = rng.fork(2);
  Rng query_rng = rng.fork(3);

  Corpus corpus;
  std::vector<std::vector<std::size_t>> paths(params.n_products);
  for (std::size_t i = 0; i < params.n_products; ++i) {
    auto& path = paths[i];
    path.resize(n_fields);
    for (std::size_t f = 0; f < n_fields; ++f) path[f] = path_rng.uniform_index(branching[f]);

    ProductRecord p;
    p.product_id = numbered_id('p', i);
    for (std::size_t f = 0; f < n_fields; ++f) {
      std::string text = label_token(prefixes[f], path[f]);
      // Deeper fields are longer, mirroring the length-ordered hierarchy.
      for (std::size_t k = 0; k < f; ++k) {
        text += ' ';
        text += filler_token(prefixes[f], filler_rng.uniform_index(params.filler_vocab));
      }
      p.field_texts[schema.name(f)] = std::move(text);
    }
    p.product_type = product_types()[path[0] % product_types().size()];
    corpus.products.push_back(std::move(p));
  }

  std::set<std::string> used_texts;
  for (std::size_t qi = 0; qi < params.n_queries; ++qi) {
    std::size_t seed_product = 0;
    std::vector<std::size_t> named;
    std::string text;
    for (std::size_t attempt = 0; attempt < kMaxQueryAttempts; ++attempt) {
      seed_product = query_rng.uniform_index(params.n_products);
      const std::size_t depth = query_rng.uniform_index(n_fields);
      named.clear();
      for (std::size_t f = 0; f < depth; ++f) {
        if (query_rng.uniform() < params.shallow_label_rate) named.push_back(f);
      }
      named.push_back(depth);
      text.clear();
      for (const auto f : named) {
        if (!text.empty()) text += ' ';
        text += label_token(prefixes[f], paths[seed_product][f]);
      }
      if (!used_texts.contains(text)) break;
    }
    used_texts.insert(text);

    const auto& target = paths[seed_product];
    const std::vector<std::size_t> shallower(named.begin(), named.end() - 1);
    std::vector<std::size_t> exact, substitute, irrelevant;
    for (std::size_t i = 0; i < params.n_products; ++i) {
      if (agrees_on(paths[i], target, named)) {
        exact.push_back(i);
      } else if (!shallower.empty() && agrees_on(paths[i], target, shallower)) {
        substitute.push_back(i);
      } else {
        irrelevant.push_back(i);
      }
    }
    substitute = sample_sorted(std::move(substitute), params.max_substitutes, query_rng);
    irrelevant = sample_sorted(std::move(irrelevant), params.max_irrelevant, query_rng);

    QueryRecord q;
    q.query_id = numbered_id('q', qi);
    q.text = text;
    for (auto i : exact) q.judgments.push_back({corpus.products[i].product_id, RelevanceLabel::Exact});
    for (auto i : substitute) {
      q.judgments.push_back({corpus.products[i].product_id, RelevanceLabel::Substitute});
    }
    for (auto i : irrelevant) {
      q.judgments.push_back({corpus.products[i].product_id, RelevanceLabel::Irrelevant});
    }

    // The label construction must agree with plain string matching on the texts.
    auto matched = brute_force_exact_set(q, corpus.products, schema);
    auto labelled = q.exact_ids();
    if (matched != labelled) {
      throw ContractViolation("synthetic labels disagree with string matching for " + q.query_id);
    }
    corpus.queries.push_back(std::move(q));
  }
  // Deduplication exhausts shallow texts early; shuffle so both splits see the same depth mix.
  query_rng.shuffle(corpus.queries);
  for (std::size_t qi = 0; qi < corpus.queries.size(); ++qi) {
    corpus.queries[qi].query_id = numbered_id('q', qi);
  }
  return corpus;
}

std::vector<std::string> brute_force_exact_set(const QueryRecord& query,
                                               const std::vector<ProductRecord>& products,
                                               const FieldSchema& schema) {
  const auto query_words = words(query.text);
  std::vector<std::string> out;
  for (const auto& p : products) {
    std::set<std::string> have;
    for (const auto& name : schema.names()) {
      for (auto& w : words(p.text(name))) have.insert(std::move(w));
    }
    const bool all = std::all_of(query_words.begin(), query_words.end(),
                                 [&](const std::string& w) { return have.contains(w); });
    if (all) out.push_back(p.product_id);
  }
  return out;
}

}  // namespace charm
