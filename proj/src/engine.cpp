// Copyright 2026 The spanq Authors.
// SPDX-License-Identifier: Apache-2.0

#include "spanq/engine.hpp"

#include <algorithm>
#include <json.hpp>

namespace spanq {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double unit(uint64_t x) { return static_cast<double>(splitmix64(x) >> 11) * 0x1.0p-53; }

}  // namespace

std::vector<TokenId> MockModel::generate(std::span<const TokenId> input,
                                         const GenParams& params) const {
  if (params.max_tokens && *params.max_tokens == 0) {
    throw std::invalid_argument("max_tokens must be >= 1");
  }
  uint64_t h = 0x6a09e667f3bcc908ULL;
  for (TokenId t : input) h = splitmix64(h ^ static_cast<uint64_t>(static_cast<uint32_t>(t)));
  const uint32_t bs = std::max<uint32_t>(block_size_, 1);
  const size_t length = params.max_tokens ? *params.max_tokens : bs + splitmix64(h ^ 0x5eed) % (7 * bs + 1);

  const uint64_t range = vocab_.size() - static_cast<uint32_t>(MockVocab::kFirstContent);
  const double p = std::min(params.temperature, 1.0);
  const uint64_t stream = splitmix64(h ^ splitmix64(static_cast<uint64_t>(params.seed) + 0x51ed));
  std::vector<TokenId> out(length);
  for (size_t j = 0; j < length; ++j) {
    uint64_t pick = splitmix64(h + j * 0x9e3779b97f4a7c15ULL);
    if (p > 0 && unit(stream + 2 * j) < p) pick = splitmix64(stream + 2 * j + 1);
    out[j] = static_cast<TokenId>(MockVocab::kFirstContent + pick % range);
  }
  return out;
}

void CostReport::add(const RequestCost& r, const CostCoefficients& c) {
  attended_pairs += r.attended_pairs;
  decode_pairs += r.decode_pairs;
  prefill_tokens += r.prefill_tokens;
  hit_tokens += r.hit_tokens;
  input_tokens += r.input_tokens;
  repositioned_tokens += r.repositioned_tokens;
  blocks_scanned += r.blocks_scanned;
  ttft_proxy += c.attn * static_cast<double>(r.attended_pairs + r.decode_pairs) +
                c.repo * static_cast<double>(r.repositioned_tokens) +
                c.hash * static_cast<double>(r.blocks_scanned);
  requests.push_back(r);
}

CostReport& CostReport::operator+=(const CostReport& o) {
  attended_pairs += o.attended_pairs;
  decode_pairs += o.decode_pairs;
  prefill_tokens += o.prefill_tokens;
  hit_tokens += o.hit_tokens;
  input_tokens += o.input_tokens;
  repositioned_tokens += o.repositioned_tokens;
  blocks_scanned += o.blocks_scanned;
  ttft_proxy += o.ttft_proxy;
  requests.insert(requests.end(), o.requests.begin(), o.requests.end());
  return *this;
}

std::string CostReport::to_json(bool pretty, bool with_requests) const {
  nlohmann::ordered_json j;
  j["attended_pairs"] = attended_pairs;
  j["decode_pairs"] = decode_pairs;
  j["prefill_tokens"] = prefill_tokens;
  j["hit_tokens"] = hit_tokens;
  j["input_tokens"] = input_tokens;
  j["repositioned_tokens"] = repositioned_tokens;
  j["blocks_scanned"] = blocks_scanned;
  j["ttft_proxy"] = ttft_proxy;
  if (with_requests) {
    j["requests"] = nlohmann::ordered_json::array();
    for (const auto& r : requests) {
      j["requests"].push_back({{"label", r.label},
                               {"input_tokens", r.input_tokens},
                               {"hit_tokens", r.hit_tokens},
                               {"prefill_tokens", r.prefill_tokens},
                               {"attended_pairs", r.attended_pairs},
                               {"decode_pairs", r.decode_pairs},
                               {"repositioned_tokens", r.repositioned_tokens},
                               {"blocks_scanned", r.blocks_scanned},
                               {"output_tokens", r.output_tokens},
                               {"skipped", r.skipped}});
    }
  }
  return j.dump(pretty ? 2 : -1);
}

uint64_t attended_pairs(const TokenizedQuery& tq, size_t hit_tokens) {
  const size_t n = tq.tokens.size();
  std::vector<uint64_t> content_before(n + 1, 0);
  for (size_t i = 0; i < n; ++i) {
    content_before[i + 1] = content_before[i] + (tq.tokens[i].kind == TokenKind::Content);
  }
  // Innermost scope start per token; inner spans start later, so they
  // overwrite their parents when applied in start order.
  std::vector<uint32_t> scope(n, 0);
  std::vector<SpanRange> ranges = tq.span_ranges();
  std::stable_sort(ranges.begin(), ranges.end(), [](const SpanRange& a, const SpanRange& b) {
    return std::tie(a.start, a.depth) < std::tie(b.start, b.depth);
  });
  for (const auto& r : ranges) {
    for (uint32_t i = r.start; i < std::min<size_t>(r.end, n); ++i) scope[i] = r.start;
  }
  uint64_t pairs = 0;
  for (size_t i = hit_tokens; i < n; ++i) {
    if (tq.tokens[i].kind != TokenKind::Content) continue;
    pairs += content_before[i] - content_before[scope[i]];
  }
  return pairs;
}

namespace {

class Executor {
 public:
  Executor(const SpanQuery& q, CacheState& cache, const MockModel& model, const MockVocab& vocab,
           const ExecuteOptions& options)
      : q_(q), cache_(cache), model_(model), vocab_(vocab), options_(options),
        bs_(cache.block_size()) {}

  ExecResult run() {
    const NodeId root = q_.root();
    for (NodeId c : q_.node(root).children) visit(c, false);

    TokenizedQuery tq = align_blocks(tokenize_query(q_, vocab_, bs_, tokenize_options()));
    RequestCost cost = lookup("root", tq);
    std::vector<TokenId> input = content_ids(tq.tokens);
    res_.output = model_.generate(input, q_.node(root).gen.value_or(GenParams{}));
    cost.output_tokens = res_.output.size();
    insert(tq, res_.output);
    res_.cost.add(cost, options_.cost);

    res_.result.set_root(res_.result.leaf(Op::Assistant, vocab_.decode(res_.output)));
    std::vector<NodeId> kids;
    for (NodeId c : q_.node(root).children) kids.push_back(resolve(c));
    res_.resolved.set_root(res_.resolved.interior(Op::Join, kids));
    return std::move(res_);
  }

 private:
  TokenizeOptions tokenize_options() const {
    TokenizeOptions t;
    t.emit_spans = options_.emit_spans;
    t.outputs = &res_.outputs;
    return t;
  }

  void visit(NodeId id, bool under_span) {
    const Node& n = q_.node(id);
    for (NodeId c : n.children) visit(c, n.op == Op::Span);
    switch (n.op) {
      case Op::Span:
        // A span around G1 is served by the preparation itself.
        if (q_.node(n.children.at(0)).op != Op::Generate) break;
        if (options_.emit_spans) {
          span(id);
        } else {
          generate(n.children.at(0));
        }
        break;
      case Op::Prepare:
        if (options_.emit_spans) prepare(id);
        break;
      case Op::Generate:
        if (!under_span) generate(id);
        break;
      default:
        break;
    }
  }

  RequestCost lookup(const std::string& label, const TokenizedQuery& tq) {
    const size_t full = tq.tokens.size() / bs_;
    if (full > cache_.capacity()) {
      throw EngineError("cache capacity of " + std::to_string(cache_.capacity()) +
                        " blocks cannot hold a request of " + std::to_string(full) + " blocks");
    }
    std::vector<BlockHash> hashes = block_hashes(tq.tokens, bs_);
    LookupResult lr = cache_.lookup(hashes);
    RequestCost c;
    c.label = label;
    c.input_tokens = lr.input_tokens;
    c.hit_tokens = lr.hit_tokens;
    c.prefill_tokens = lr.input_tokens - lr.hit_tokens;
    c.attended_pairs = attended_pairs(tq, lr.hit_tokens);
    c.repositioned_tokens = static_cast<uint64_t>(bs_) * lr.repositioned_blocks();
    c.blocks_scanned = lr.blocks_scanned;
    return c;
  }

  void insert(const TokenizedQuery& tq, std::span<const TokenId> output) {
    std::vector<Token> all = tq.tokens;
    for (TokenId t : output) all.push_back({t, TokenKind::Content, Role::Assistant, std::nullopt});
    if (all.size() / bs_ > cache_.capacity()) {
      throw EngineError("cache capacity of " + std::to_string(cache_.capacity()) +
                        " blocks cannot hold a request of " + std::to_string(all.size() / bs_) +
                        " blocks");
    }
    cache_.insert(block_hashes(all, bs_));
  }

  // Span(G[x]): `(` x, generated, then cropped so the span ends on a block.
  void span(NodeId id) {
    const NodeId gen = q_.node(id).children.at(0);
    TokenizedQuery tq =
        align_blocks(tokenize_span_request(q_, id, vocab_, bs_, tokenize_options()));
    RequestCost cost = lookup("span", tq);
    std::vector<TokenId> input = content_ids(tq.tokens);
    std::vector<TokenId> out = model_.generate(input, q_.node(gen).gen.value_or(GenParams{}));
    cost.decode_pairs = decode_pairs(input.size(), out.size());
    cost.output_tokens = out.size();
    CropResult crop = crop_trailing_partial(out, bs_, tq.tokens.size());
    if (crop.warning) res_.warnings.push_back(*crop.warning);
    insert(tq, crop.kept);
    res_.outputs[gen] = std::move(crop.kept);
    res_.cost.add(cost, options_.cost);
  }

  // G1[x]: `(` x padded to a block boundary; skipped when fully cached.
  void prepare(NodeId id) {
    TokenizedQuery tq =
        align_blocks(tokenize_span_request(q_, id, vocab_, bs_, tokenize_options()));
    while (tq.tokens.size() % bs_ != 0) {
      tq.tokens.push_back({MockVocab::kPad, TokenKind::Pad, Role::None, std::nullopt});
    }
    tq.spans[0].range.end = static_cast<uint32_t>(tq.tokens.size());
    RequestCost cost = lookup("prepare", tq);
    if (cost.hit_tokens == cost.input_tokens) {
      cost.skipped = true;
      res_.cost.add(cost, options_.cost);
      return;
    }
    std::vector<TokenId> input = content_ids(tq.tokens);
    GenParams one = q_.node(id).gen.value_or(GenParams{});
    one.max_tokens = 1;
    cost.output_tokens = model_.generate(input, one).size();
    cost.decode_pairs = decode_pairs(input.size(), cost.output_tokens);
    insert(tq, {});
    res_.cost.add(cost, options_.cost);
  }

  // Unmarked G: its own request; only the output flows to the parent.
  void generate(NodeId id) {
    SpanQuery sub = q_;
    sub.set_root(id);
    TokenizedQuery tq = align_blocks(tokenize_query(sub, vocab_, bs_, tokenize_options()));
    RequestCost cost = lookup("generate", tq);
    std::vector<TokenId> input = content_ids(tq.tokens);
    std::vector<TokenId> out = model_.generate(input, q_.node(id).gen.value_or(GenParams{}));
    cost.decode_pairs = decode_pairs(input.size(), out.size());
    cost.output_tokens = out.size();
    insert(tq, out);
    res_.outputs[id] = std::move(out);
    res_.cost.add(cost, options_.cost);
  }

  NodeId answer(NodeId gen) {
    auto it = res_.outputs.find(gen);
    std::vector<TokenId> none;
    return res_.resolved.leaf(Op::Assistant,
                              vocab_.decode(it == res_.outputs.end() ? none : it->second));
  }

  NodeId resolve(NodeId id) {
    const Node& n = q_.node(id);
    SpanQuery& out = res_.resolved;
    std::vector<NodeId> kids;
    switch (n.op) {
      case Op::Span: {
        const NodeId gen = n.children.at(0);
        for (NodeId c : q_.node(gen).children) kids.push_back(resolve(c));
        auto it = res_.outputs.find(gen);
        if (it != res_.outputs.end() && !it->second.empty()) kids.push_back(answer(gen));
        return out.interior(Op::Join, kids);
      }
      case Op::Prepare:
        for (NodeId c : n.children) kids.push_back(resolve(c));
        return kids.size() == 1 ? kids[0] : out.interior(Op::Join, kids);
      case Op::Generate:
        return answer(id);
      case Op::Join:
      case Op::Plus:
        for (NodeId c : n.children) kids.push_back(resolve(c));
        return out.interior(n.op, kids);
      default:
        return out.leaf(n.op, n.content);
    }
  }

  const SpanQuery& q_;
  CacheState& cache_;
  const MockModel& model_;
  const MockVocab& vocab_;
  const ExecuteOptions& options_;
  const uint32_t bs_;
  ExecResult res_;
};

}  // namespace

ExecResult execute(const SpanQuery& query, CacheState& cache, const MockModel& model,
                   const MockVocab& vocab, const ExecuteOptions& options) {
  if (model.vocab().size() != vocab.size()) {
    throw EngineError("model/vocab mismatch: model vocabulary has " +
                      std::to_string(model.vocab().size()) + " ids, tokenizer " +
                      std::to_string(vocab.size()));
  }
  ValidationReport report = validate(query);
  if (!report.ok()) throw EngineError("invalid query: " + report.to_string());
  if (query.count(Op::Chat) || query.count(Op::Retrieve)) {
    throw EngineError("query still contains C or R nodes; run optimize first");
  }
  if (query.node(query.root()).op != Op::Generate) {
    throw EngineError("query root must be a G node");
  }
  return Executor(query, cache, model, vocab, options).run();
}

}  // namespace spanq
