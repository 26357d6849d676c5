// Copyright 2026 The spanq Authors.
// SPDX-License-Identifier: Apache-2.0

// spanq command-line driver.

#include <CLI11.hpp>
#include <json.hpp>

#include <fmt/chrono.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>

#include "spanq/bench.hpp"
#include "spanq/corpus.hpp"
#include "spanq/engine.hpp"
#include "spanq/kv_cache.hpp"
#include "spanq/optimizer.hpp"
#include "spanq/span_ast.hpp"
#include "spanq/tokenizer.hpp"

namespace {

using nlohmann::ordered_json;
using namespace spanq;

// Exit codes.
constexpr int kOk = 0;
constexpr int kInputError = 1;
constexpr int kStateError = 2;

struct CliError : std::runtime_error {
  CliError(int code, const std::string& what) : std::runtime_error(what), code(code) {}
  int code;
};

void init_logging() {
  auto logger = spdlog::stderr_color_mt("spanq");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("SPANQ_LOG")) {
    spdlog::set_level(spdlog::level::from_str(env));
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliError(kInputError, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CliError(kInputError, "cannot write " + path);
  out << data;
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
  } else {
    write_file(out_path, text.back() == '\n' ? text : text + '\n');
    spdlog::info("wrote {}", out_path);
  }
}

SpanQuery load_query(const std::string& path) {
  try {
    return parse_sexpr(read_file(path));
  } catch (const ParseError& e) {
    throw CliError(kInputError, path + ": " + e.what());
  }
}

// One document per non-empty line.
Corpus load_corpus(const std::string& path, uint32_t fragment_words) {
  std::istringstream in(read_file(path));
  std::vector<std::string> docs;
  for (std::string line; std::getline(in, line);) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) docs.push_back(line);
  }
  return Corpus::from_documents(docs, fragment_words);
}

struct OptimizeFlags {
  std::string rules = "default";
  unsigned k = 2;
  std::vector<std::string> corpora;  // NAME=FILE
  uint32_t fragment_words = 100;
  size_t max_iters = 100000;
};

void add_optimize_flags(CLI::App* app, OptimizeFlags& f) {
  app->add_option("--rules", f.rules, "Rule set")
      ->check(CLI::IsMember({"default", "attention", "desugar", "none"}))
      ->capture_default_str();
  app->add_option("--k", f.k, "Judge fan-in for the attention rules")
      ->check(CLI::Range(2u, 1u << 16))
      ->capture_default_str();
  app->add_option("--corpus", f.corpora, "Retrieval corpus NAME=FILE, one document per line");
  app->add_option("--fragment-words", f.fragment_words, "Words per corpus fragment")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app->add_option("--max-iters", f.max_iters, "Rewrite budget")->capture_default_str();
}

OptimizeResult run_optimizer(const SpanQuery& query, const OptimizeFlags& f,
                             CorpusRegistry& registry) {
  for (const auto& spec : f.corpora) {
    auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw CliError(kInputError, "--corpus expects NAME=FILE, got " + spec);
    }
    registry.add(spec.substr(0, eq), load_corpus(spec.substr(eq + 1), f.fragment_words));
  }
  RuleSetOptions options{registry.retriever(), f.k};
  try {
    return optimize(query, rule_set(f.rules, options), f.max_iters);
  } catch (const NonConvergenceError& e) {
    spdlog::debug("trace: {}", e.trace().to_json(false));
    throw CliError(kStateError, e.what());
  } catch (const RetrievalError& e) {
    throw CliError(kInputError, e.what());
  } catch (const std::invalid_argument& e) {
    throw CliError(kInputError, e.what());
  }
}

// -- optimize ----------------------------------------------------------------

struct OptimizeCmd {
  std::string file;
  OptimizeFlags flags;
  std::string trace;
  std::string format = "sexpr";
  std::string out;

  void attach(CLI::App& root) {
    auto* app = root.add_subcommand("optimize", "Rewrite a query to its span-aware form");
    app->add_option("file", file, "Query file")->required();
    add_optimize_flags(app, flags);
    app->add_option("--trace", trace, "Write the rewrite trace JSON here");
    app->add_option("--format", format, "Output format")
        ->check(CLI::IsMember({"sexpr", "dot"}))
        ->capture_default_str();
    app->add_option("--out", out, "Output file (default stdout)");
    app->callback([this] { run(); });
  }

  void run() {
    CorpusRegistry registry;
    OptimizeResult r = run_optimizer(load_query(file), flags, registry);
    spdlog::info("{} rewrites", r.trace.steps.size());
    if (!trace.empty()) write_file(trace, r.trace.to_json() + "\n");
    emit(render(r.query, format == "dot" ? RenderFormat::Dot : RenderFormat::Sexpr), out);
  }
};

// -- tokenize ----------------------------------------------------------------

struct TokenizeCmd {
  std::string file;
  uint32_t block_size = 16;
  bool compact = false;
  bool baseline = false;
  bool no_align = false;
  std::string out;

  void attach(CLI::App& root) {
    auto* app = root.add_subcommand("tokenize", "Print the token listing of an optimized query");
    app->add_option("file", file, "Query file")->required();
    app->add_option("--block-size", block_size)->check(CLI::PositiveNumber)->capture_default_str();
    app->add_flag("--compact", compact, "Two-special-token encoding");
    app->add_flag("--baseline", baseline, "Flat serialization without span boundaries");
    app->add_flag("--no-align", no_align, "Skip pad insertion");
    app->add_option("--out", out, "Output file (default stdout)");
    app->callback([this] { run(); });
  }

  void run() {
    SpanQuery q = load_query(file);
    MockVocab vocab;
    TokenizeOptions options;
    options.emit_spans = !baseline;
    options.compact_specials = compact;
    TokenizedQuery tq;
    try {
      tq = tokenize_query(q, vocab, block_size, options);
    } catch (const TokenizeError& e) {
      std::string msg = e.what();
      if (msg.find("run optimize first") == std::string::npos) msg += "; run optimize first";
      throw CliError(kStateError, msg);
    } catch (const VocabError& e) {
      throw CliError(kInputError, e.what());
    }
    if (!no_align) tq = align_blocks(tq);
    emit(format_listing(tq), out);
  }
};

// -- run ---------------------------------------------------------------------

struct RunCmd {
  std::string file;
  OptimizeFlags flags;
  uint32_t block_size = 16;
  uint32_t capacity = 4096;
  std::string cache_in;
  std::string cache_out;
  bool baseline = false;
  bool compact = false;
  bool requests = false;
  CostCoefficients cost;
  std::string out;

  void attach(CLI::App& root) {
    auto* app = root.add_subcommand("run", "Optimize and execute a query on the mock engine");
    app->add_option("file", file, "Query file")->required();
    add_optimize_flags(app, flags);
    app->add_option("--block-size", block_size)->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--capacity", capacity, "Cache capacity in blocks")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app->add_option("--cache-in", cache_in, "Start from this cache snapshot");
    app->add_option("--cache-out", cache_out, "Write the final cache snapshot here");
    app->add_flag("--baseline", baseline, "Stock prefix cache: no span boundaries");
    app->add_flag("--requests", requests, "Include per-request costs");
    app->add_flag("--compact", compact, "Compact JSON");
    app->add_option("--c-attn", cost.attn)->capture_default_str();
    app->add_option("--c-repo", cost.repo)->capture_default_str();
    app->add_option("--c-hash", cost.hash)->capture_default_str();
    app->add_option("--out", out, "Output file (default stdout)");
    app->callback([this] { run(); });
  }

  void run() {
    CorpusRegistry registry;
    OptimizeResult opt = run_optimizer(load_query(file), flags, registry);
    CacheState cache = cache_in.empty() ? CacheState(capacity, block_size) : load_cache(cache_in);
    if (cache.block_size() != block_size) {
      throw CliError(kInputError, "snapshot block size " + std::to_string(cache.block_size()) +
                                      " differs from --block-size " + std::to_string(block_size));
    }
    MockVocab vocab;
    MockModel model(vocab, block_size);
    ExecuteOptions options{!baseline, cost};
    ExecResult r;
    try {
      r = execute(opt.query, cache, model, vocab, options);
    } catch (const EngineError& e) {
      throw CliError(kStateError, e.what());
    }
    for (const auto& w : r.warnings) spdlog::warn("{}", w);
    if (!cache_out.empty()) save_cache(cache, cache_out);

    ordered_json j;
    j["optimized"] = render(opt.query);
    j["result"] = render(r.result);
    j["output"] = vocab.decode(r.output);
    j["cost"] = ordered_json::parse(r.cost.to_json(false, requests));
    j["cache"] = ordered_json::parse(cache.stats().to_json(false));
    j["warnings"] = r.warnings;
    emit(j.dump(compact ? -1 : 2), out);
  }

  static CacheState load_cache(const std::string& path) {
    std::string bytes = read_file(path);
    try {
      return CacheState::restore({reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size()});
    } catch (const SnapshotError& e) {
      throw CliError(kInputError, path + ": " + e.what());
    }
  }

  static void save_cache(const CacheState& cache, const std::string& path) {
    std::vector<uint8_t> bytes = cache.snapshot();
    write_file(path, std::string(bytes.begin(), bytes.end()));
  }
};

// -- cache -------------------------------------------------------------------

struct CacheCmd {
  // snapshot
  std::vector<std::string> queries;
  OptimizeFlags flags;
  uint32_t block_size = 16;
  uint32_t capacity = 4096;
  std::string snapshot_out;
  // restore / stats
  std::string snapshot_in;
  std::string restore_out;
  bool compact = false;

  void attach(CLI::App& root) {
    auto* cache = root.add_subcommand("cache", "Cache snapshot tools");
    cache->require_subcommand(1);

    auto* snap = cache->add_subcommand("snapshot", "Run queries in order and snapshot the cache");
    snap->add_option("queries", queries, "Query files")->required();
    add_optimize_flags(snap, flags);
    snap->add_option("--block-size", block_size)->check(CLI::PositiveNumber)->capture_default_str();
    snap->add_option("--capacity", capacity)->check(CLI::PositiveNumber)->capture_default_str();
    snap->add_option("--out", snapshot_out, "Snapshot file")->required();
    snap->callback([this] { snapshot(); });

    auto* restore = cache->add_subcommand("restore", "Verify a snapshot and re-serialize it");
    restore->add_option("file", snapshot_in)->required();
    restore->add_option("--out", restore_out, "Re-serialized snapshot file");
    restore->add_flag("--compact", compact);
    restore->callback([this] { restore_cmd(); });

    auto* stats = cache->add_subcommand("stats", "Print snapshot statistics");
    stats->add_option("file", snapshot_in)->required();
    stats->add_flag("--compact", compact);
    stats->callback([this] { stats_cmd(); });
  }

  void snapshot() {
    CacheState cache(capacity, block_size);
    MockVocab vocab;
    MockModel model(vocab, block_size);
    for (const auto& path : queries) {
      CorpusRegistry registry;
      OptimizeResult opt = run_optimizer(load_query(path), flags, registry);
      try {
        execute(opt.query, cache, model, vocab);
      } catch (const EngineError& e) {
        throw CliError(kStateError, path + ": " + e.what());
      }
    }
    RunCmd::save_cache(cache, snapshot_out);
    spdlog::info("{} blocks resident", cache.size());
  }

  ordered_json describe(const CacheState& cache) const {
    ordered_json j;
    j["capacity"] = cache.capacity();
    j["block_size"] = cache.block_size();
    j["resident_blocks"] = cache.size();
    j["stats"] = ordered_json::parse(cache.stats().to_json(false));
    return j;
  }

  void restore_cmd() {
    CacheState cache = RunCmd::load_cache(snapshot_in);
    if (!restore_out.empty()) RunCmd::save_cache(cache, restore_out);
    std::cout << describe(cache).dump(compact ? -1 : 2) << '\n';
  }

  void stats_cmd() {
    CacheState cache = RunCmd::load_cache(snapshot_in);
    std::cout << describe(cache)["stats"].dump(compact ? -1 : 2) << '\n';
  }
};

// -- bench -------------------------------------------------------------------

// "1..32", "1,2,8" or "4"
template <typename T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  if (auto dots = text.find(".."); dots != std::string::npos) {
    long lo = std::stol(text.substr(0, dots));
    long hi = std::stol(text.substr(dots + 2));
    if (lo > hi) throw ConfigError("empty range " + text);
    for (long v = lo; v <= hi; ++v) out.push_back(static_cast<T>(v));
    return out;
  }
  std::istringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    std::istringstream cell(item);
    T v{};
    if (!(cell >> v) || !(cell >> std::ws).eof()) throw ConfigError("bad list item '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

template <typename T>
std::vector<T> list_value(const ordered_json& v) {
  if (v.is_string()) return parse_list<T>(v.get<std::string>());
  if (v.is_array()) return v.get<std::vector<T>>();
  return {v.get<T>()};
}

// Options registered as both a config key and a flag. Precedence:
// defaults < config file < explicit flags.
class Overrides {
 public:
  template <typename T>
  void scalar(CLI::App* app, const std::string& flag, const std::string& key, T& field) {
    auto holder = std::make_shared<T>();
    CLI::Option* opt = app->add_option(flag, *holder);
    entries_.push_back({key, [&field](const ordered_json& v) { field = v.get<T>(); },
                        [&field, holder] { field = *holder; }, opt});
    holders_.push_back(holder);
  }

  template <typename T>
  void list(CLI::App* app, const std::string& flag, const std::string& key, std::vector<T>& field) {
    auto holder = std::make_shared<std::string>();
    CLI::Option* opt = app->add_option(flag, *holder, "List or range, e.g. 1..32 or 1,2,4");
    entries_.push_back({key, [&field](const ordered_json& v) { field = list_value<T>(v); },
                        [&field, holder] { field = parse_list<T>(*holder); }, opt});
    holders_.push_back(holder);
  }

  void apply(const std::string& config_path) {
    if (!config_path.empty()) {
      ordered_json j;
      try {
        j = ordered_json::parse(read_file(config_path));
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(config_path + ": " + e.what());
      }
      if (!j.is_object()) throw ConfigError(config_path + ": expected a JSON object");
      for (const auto& [key, value] : j.items()) {
        auto it = std::find_if(entries_.begin(), entries_.end(),
                               [&](const Entry& e) { return e.key == key; });
        if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
        try {
          it->from_json(value);
        } catch (const nlohmann::json::exception& e) {
          throw ConfigError("config key '" + key + "': " + e.what());
        }
      }
    }
    for (auto& e : entries_) {
      if (e.option->count() > 0) e.from_flag();
    }
  }

 private:
  struct Entry {
    std::string key;
    std::function<void(const ordered_json&)> from_json;
    std::function<void()> from_flag;
    CLI::Option* option;
  };
  std::vector<Entry> entries_;
  std::vector<std::shared_ptr<void>> holders_;
};

struct BenchCmd {
  std::string format = "json";
  bool compact = false;
  bool deterministic = false;
  std::string out;
  std::string config;

  RagConfig rag;
  NestedConfig nested;
  ChatConfig chat;
  BulkConfig bulk;
  CidraBenchConfig cidra;
  std::map<std::string, Overrides> overrides;

  void common(CLI::App* app) {
    app->add_option("--format", format)->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
    app->add_flag("--compact", compact, "Compact JSON");
    app->add_flag("--deterministic", deterministic, "Omit the generated_at timestamp");
    app->add_option("--out", out, "Output file (default stdout)");
    app->add_option("--config", config, "JSON config; explicit flags take precedence");
  }

  void cost(CLI::App* app, Overrides& o, CostCoefficients& c) {
    o.scalar(app, "--c-attn", "c_attn", c.attn);
    o.scalar(app, "--c-repo", "c_repo", c.repo);
    o.scalar(app, "--c-hash", "c_hash", c.hash);
  }

  void attach(CLI::App& root) {
    auto* bench = root.add_subcommand("bench", "Run a benchmark scenario");
    bench->require_subcommand(1);

    auto* r = bench->add_subcommand("rag", "RAG sweep: baseline, span miss, span hit");
    auto& ro = overrides["rag"];
    ro.list(r, "--docs", "docs", rag.docs);
    ro.scalar(r, "--doc-tokens", "doc_tokens", rag.doc_tokens);
    ro.scalar(r, "--system-tokens", "system_tokens", rag.system_tokens);
    ro.scalar(r, "--user-tokens", "user_tokens", rag.user_tokens);
    ro.scalar(r, "--block-size", "block_size", rag.block_size);
    ro.scalar(r, "--capacity", "capacity", rag.capacity);
    ro.scalar(r, "--seed", "seed", rag.seed);
    cost(r, ro, rag.cost);
    common(r);
    r->callback([this] { run("rag"); });

    auto* n = bench->add_subcommand("nested", "Nested generation fan-out/temperature sweep");
    auto& no = overrides["nested"];
    no.list(n, "--fanout", "fanouts", nested.fanouts);
    no.list(n, "--temp", "temperatures", nested.temperatures);
    no.scalar(n, "--outer-system-tokens", "outer_system_tokens", nested.outer_system_tokens);
    no.scalar(n, "--inner-system-tokens", "inner_system_tokens", nested.inner_system_tokens);
    no.scalar(n, "--inner-user-tokens", "inner_user_tokens", nested.inner_user_tokens);
    no.scalar(n, "--outer-user-tokens", "outer_user_tokens", nested.outer_user_tokens);
    no.scalar(n, "--max-tokens", "max_tokens", nested.max_tokens);
    no.scalar(n, "--block-size", "block_size", nested.block_size);
    no.scalar(n, "--capacity", "capacity", nested.capacity);
    no.scalar(n, "--seed", "seed", nested.seed);
    cost(n, no, nested.cost);
    common(n);
    n->callback([this] { run("nested"); });

    auto* c = bench->add_subcommand("chat", "Multi-turn chat hit-rate replay");
    auto& co = overrides["chat"];
    co.scalar(c, "--turns", "turns", chat.turns);
    co.scalar(c, "--user-tokens", "user_tokens", chat.user_tokens);
    co.scalar(c, "--output-tokens", "output_tokens", chat.output_tokens);
    co.scalar(c, "--block-size", "block_size", chat.block_size);
    co.scalar(c, "--capacity", "capacity", chat.capacity);
    co.scalar(c, "--seed", "seed", chat.seed);
    common(c);
    c->callback([this] { run("chat"); });

    auto* b = bench->add_subcommand("bulk", "Bulk RAG scheduling");
    auto& bo = overrides["bulk"];
    bo.scalar(b, "--queries", "queries", bulk.queries);
    bo.scalar(b, "--documents", "documents", bulk.documents);
    bo.scalar(b, "--document-words", "document_words", bulk.document_words);
    bo.scalar(b, "--fragment-words", "fragment_words", bulk.fragment_words);
    bo.scalar(b, "--k", "k", bulk.k);
    bo.scalar(b, "--ratio", "working_set_ratio", bulk.working_set_ratio);
    bo.scalar(b, "--block-size", "block_size", bulk.block_size);
    bo.scalar(b, "--seed", "seed", bulk.seed);
    common(b);
    b->callback([this] { run("bulk"); });

    auto* x = bench->add_subcommand("cidra", "Random repositioning instance vs. the oracle");
    auto& xo = overrides["cidra"];
    xo.scalar(x, "--blocks", "blocks", cidra.blocks);
    xo.scalar(x, "--queries", "queries", cidra.queries);
    xo.scalar(x, "--conflict-rate", "conflict_rate", cidra.conflict_rate);
    xo.scalar(x, "--seed", "seed", cidra.seed);
    xo.scalar(x, "--batch-size", "batch_size", cidra.batch_size);
    xo.scalar(x, "--workers", "workers", cidra.workers);
    xo.scalar(x, "--block-size", "block_size", cidra.geometry.block_size);
    xo.scalar(x, "--head-dim", "head_dim", cidra.geometry.head_dim);
    xo.scalar(x, "--layers", "layers", cidra.geometry.layers);
    common(x);
    x->callback([this] { run("cidra"); });
  }

  void run(const std::string& scenario) {
    try {
      overrides[scenario].apply(config);
    } catch (const std::logic_error& e) {  // ConfigError, std::stol failures
      throw CliError(kInputError, std::string("bad config: ") + e.what());
    }
    const bool pretty = !compact;
    std::string results;
    try {
      auto t0 = std::chrono::steady_clock::now();
      if (scenario == "rag") {
        auto p = rag_sweep(rag);
        results = format == "csv" ? rag_csv(p) : rag_json(p, pretty);
      } else if (scenario == "nested") {
        auto p = nested_sweep(nested);
        results = format == "csv" ? nested_csv(p) : nested_json(p, pretty);
      } else if (scenario == "chat") {
        auto p = chat_replay(chat);
        results = format == "csv" ? chat_csv(p) : chat_json(p, pretty);
      } else if (scenario == "bulk") {
        auto p = bulk_bench(bulk);
        results = format == "csv" ? bulk_csv(p) : bulk_json(p, pretty);
      } else {
        auto p = cidra_bench(cidra);
        results = format == "csv" ? cidra_csv(p) : cidra_json(p, pretty);
      }
      spdlog::info("{} finished in {:.2f} s", scenario,
                   std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    } catch (const std::invalid_argument& e) {
      throw CliError(kInputError, std::string("bad config: ") + e.what());
    } catch (const EngineError& e) {
      throw CliError(kInputError, std::string("bad config: ") + e.what());
    }
    if (format == "csv") {
      emit(results, out);
      return;
    }
    ordered_json j;
    j["scenario"] = scenario;
    if (!deterministic) {
      j["generated_at"] = fmt::format("{:%FT%TZ}", fmt::gmtime(std::time(nullptr)));
    }
    j["results"] = ordered_json::parse(results);
    emit(j.dump(pretty ? 2 : -1), out);
  }
};

}  // namespace

int main(int argc, char** argv) {
  init_logging();
  CLI::App app{"spanq: span queries over a simulated prefix cache"};
  app.require_subcommand(1);
  OptimizeCmd optimize_cmd;
  TokenizeCmd tokenize_cmd;
  RunCmd run_cmd;
  CacheCmd cache_cmd;
  BenchCmd bench_cmd;
  optimize_cmd.attach(app);
  tokenize_cmd.attach(app);
  run_cmd.attach(app);
  cache_cmd.attach(app);
  bench_cmd.attach(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const CliError& e) {
    spdlog::error("{}", e.what());
    return e.code;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kInputError;
  }
  return kOk;
}
