#include "narasr/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <exception>
#include <thread>

#include "narasr/errors.hpp"

namespace narasr {

Recognizer::Recognizer(const ModelParams& params, const Vocabulary& vocab) : params_(params), vocab_(vocab) {
  if (params.config().vocab_size != vocab.size()) {
    throw ContractViolation("recognizer: model vocab_size differs from vocabulary size");
  }
}

Inference Recognizer::infer(const Tensor& features) const {
  ++forward_passes_;
  ad::Tape tape(false);
  graph::BoundParams p(tape, params_, false);
  ad::Var h = graph::encode(p, features);
  ad::Var logits = graph::ctc_branch(p, h);
  Inference inf;
  inf.frame_logits = logits.value();
  inf.ctc = ctc::ctc_greedy(inf.frame_logits, vocab_.blank_id());
  if (inf.ctc.length > 0) inf.trace = graph::to_trace(graph::forward_from_encoding(p, h, logits, inf.ctc.length));
  return inf;
}

std::vector<TokenId> Recognizer::greedy(const Inference& inf) const {
  std::vector<TokenId> out;
  if (!inf.trace) return out;
  for (std::size_t r = 0; r < inf.trace->L_f.rows(); ++r) out.push_back(argmax(inf.trace->L_f.row(r)));
  return out;
}

decode::DecodeResult Recognizer::joint(const Inference& inf, const decode::DecodeConfig& config) const {
  auto cache = decode::build_cache(inf.trace ? &*inf.trace : nullptr, inf.ctc.length, vocab_.size());
  return decode::joint_decode(ctc::frame_log_probs(inf.frame_logits), cache, vocab_.blank_id(), vocab_.eos_id(),
                              config);
}

DecodeMode parse_decode_mode(const std::string& s) {
  if (s == "greedy") return DecodeMode::kGreedy;
  if (s == "joint") return DecodeMode::kJoint;
  throw UsageError("unknown decode mode '" + s + "' (expected greedy or joint)");
}

namespace {

UtteranceResult decode_one(const Recognizer& rec, const Utterance& u, DecodeMode mode,
                           const decode::DecodeConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t before = rec.forward_passes();
  UtteranceResult r;
  r.id = u.id;
  const Inference inf = rec.infer(u.features);
  if (mode == DecodeMode::kGreedy) {
    r.hypothesis = rec.greedy(inf);
  } else {
    auto res = rec.joint(inf, config);
    r.hypothesis = decode::strip_eos(res.best.tokens, rec.vocab().eos_id());
    r.degraded = res.degraded;
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.forward_passes = rec.forward_passes() - before;
  return r;
}

void summarize(CorpusDecodeResult& out, const std::vector<Utterance>& data) {
  double secs = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.counts += edit_distance(data[i].tokens, out.utterances[i].hypothesis);
    secs += out.utterances[i].seconds;
  }
  out.cer = out.counts.reference_length ? out.counts.rate() : 0.0;
  out.mean_seconds = data.empty() ? 0.0 : secs / static_cast<double>(data.size());
}

}  // namespace

CorpusDecodeResult decode_corpus(const ModelParams& params, const Vocabulary& vocab,
                                 const std::vector<Utterance>& data, DecodeMode mode,
                                 const decode::DecodeConfig& config, std::size_t threads) {
  config.validate();
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, std::max<std::size_t>(1, data.size()));
  CorpusDecodeResult out;
  out.utterances.resize(data.size());

  if (threads <= 1) {
    Recognizer rec(params, vocab);
    for (std::size_t i = 0; i < data.size(); ++i) out.utterances[i] = decode_one(rec, data[i], mode, config);
  } else {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t w = 0; w < threads; ++w) {
      workers.emplace_back([&, w] {
        try {
          Recognizer rec(params, vocab);
          for (std::size_t i = w; i < data.size(); i += threads) {
            out.utterances[i] = decode_one(rec, data[i], mode, config);
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  summarize(out, data);
  return out;
}

BenchReport bench(const ModelParams& params, const Vocabulary& vocab, const std::vector<Utterance>& data,
                  const decode::DecodeConfig& config) {
  if (data.empty()) throw ArgumentError("bench: no utterances");
  BenchReport r;
  r.utterances = data.size();
  const auto greedy = decode_corpus(params, vocab, data, DecodeMode::kGreedy, config, 1);
  const auto joint = decode_corpus(params, vocab, data, DecodeMode::kJoint, config, 1);
  r.greedy_mean_seconds = greedy.mean_seconds;
  r.joint_mean_seconds = joint.mean_seconds;
  r.ratio = greedy.mean_seconds > 0.0 ? joint.mean_seconds / greedy.mean_seconds : 0.0;
  std::size_t gp = 0, jp = 0;
  for (const auto& u : greedy.utterances) gp += u.forward_passes;
  for (const auto& u : joint.utterances) jp += u.forward_passes;
  r.greedy_passes_per_utterance = static_cast<double>(gp) / static_cast<double>(data.size());
  r.joint_passes_per_utterance = static_cast<double>(jp) / static_cast<double>(data.size());
  r.greedy_cer = greedy.cer;
  r.joint_cer = joint.cer;
  return r;
}

}  // namespace narasr
