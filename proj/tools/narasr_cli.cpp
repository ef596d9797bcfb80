// narasr command line: data generation, training, decoding, scoring, timing.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "narasr/checkpoint.hpp"
#include "narasr/dataset.hpp"
#include "narasr/errors.hpp"
#include "narasr/evaluation.hpp"
#include "narasr/metrics.hpp"
#include "narasr/synthetic.hpp"
#include "narasr/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace narasr;

namespace {

enum Exit : int { kOk = 0, kOther = 1, kFormat = 2, kContract = 3, kDivergence = 4 };

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// Copies known keys from `j` into the bound fields; anything else is an error so
// typos do not silently fall back to defaults.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw FormatError(where_ + ": expected an object");
  }
  template <typename T>
  Fields& opt(const std::string& key, T& out) {
    seen_.push_back(key);
    if (!j_.contains(key)) return *this;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw FormatError(where_ + "." + key + ": wrong type");
    }
    return *this;
  }
  const json* sub(const std::string& key) {
    seen_.push_back(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) {
        throw FormatError(where_ + ": unknown key '" + it.key() + "'");
      }
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::vector<std::string> seen_;
};

SyntheticSpec parse_spec(const json& j) {
  SyntheticSpec s;
  Fields(j, "spec")
      .opt("vocab_size", s.vocab_size)
      .opt("feature_dim", s.feature_dim)
      .opt("min_frames_per_token", s.min_frames_per_token)
      .opt("max_frames_per_token", s.max_frames_per_token)
      .opt("noise_std", s.noise_std)
      .opt("min_tokens", s.min_tokens)
      .opt("max_tokens", s.max_tokens)
      .opt("max_silence_frames", s.max_silence_frames)
      .opt("markov_sharpness", s.markov_sharpness)
      .opt("allow_repeats", s.allow_repeats)
      .opt("train_size", s.train_size)
      .opt("dev_size", s.dev_size)
      .opt("test_size", s.test_size)
      .opt("text_corpus_size", s.text_corpus_size)
      .done();
  return s;
}

// input_dim and vocab_size default to what the data dictates.
TrainConfig parse_train_config(const json& j, std::size_t input_dim, std::size_t vocab_size) {
  TrainConfig c;
  c.model.input_dim = input_dim;
  c.model.vocab_size = vocab_size;
  Fields top(j, "config");
  top.opt("learning_rate", c.learning_rate)
      .opt("steps", c.steps)
      .opt("batch_size", c.batch_size)
      .opt("seed", c.seed)
      .opt("freeze_encoder_steps", c.freeze_encoder_steps)
      .opt("freeze_lm_steps", c.freeze_lm_steps)
      .opt("clip_norm", c.clip_norm)
      .opt("pretrain_lm_steps", c.pretrain_lm_steps)
      .opt("frame_perturb_prob", c.frame_perturb_prob)
      .opt("feature_noise_std", c.feature_noise_std);
  if (const json* m = top.sub("model")) {
    Fields(*m, "config.model")
        .opt("input_dim", c.model.input_dim)
        .opt("model_dim", c.model.model_dim)
        .opt("heads", c.model.heads)
        .opt("ffn_dim", c.model.ffn_dim)
        .opt("encoder_layers", c.model.encoder_layers)
        .opt("lm_layers", c.model.lm_layers)
        .opt("vocab_size", c.model.vocab_size)
        .opt("alpha", c.model.alpha)
        .done();
  }
  if (const json* l = top.sub("loss")) {
    Fields(*l, "config.loss").opt("lambda1", c.loss.lambda1).opt("lambda2", c.loss.lambda2).opt("beta", c.loss.beta).done();
  }
  top.done();
  if (c.model.input_dim != input_dim) {
    throw ContractViolation("config.model.input_dim " + std::to_string(c.model.input_dim) +
                            " differs from the data's feature dimension " + std::to_string(input_dim));
  }
  if (c.model.vocab_size != vocab_size) {
    throw ContractViolation("config.model.vocab_size " + std::to_string(c.model.vocab_size) +
                            " differs from vocab.txt (" + std::to_string(vocab_size) + " tokens)");
  }
  return c;
}

Vocabulary data_vocab(const fs::path& dir) { return load_vocab(dir / "vocab.txt"); }

Checkpoint load_for(const fs::path& ckpt, const Vocabulary& vocab) {
  return load_checkpoint(ckpt, vocab.hash_hex());
}

void print_counts(const ErrorCounts& c) {
  std::printf("N=%zu S=%zu I=%zu D=%zu errors=%zu CER=%.4f%%\n", c.reference_length, c.substitutions, c.insertions,
              c.deletions, c.errors(), c.reference_length ? 100.0 * c.rate() : 0.0);
}

int cmd_gen_data(const fs::path& spec_path, std::uint64_t seed, const fs::path& out) {
  const SyntheticSpec spec = parse_spec(read_json(spec_path));
  const auto corpus = gen_synthetic(spec, seed);
  io::write_corpus(out, corpus);
  std::printf("wrote %zu/%zu/%zu utterances and %zu text lines to %s\n", corpus.train.size(), corpus.dev.size(),
              corpus.test.size(), corpus.text.size(), out.string().c_str());
  return kOk;
}

int cmd_train(const fs::path& data, const fs::path& config_path, const fs::path& out) {
  const Vocabulary vocab = data_vocab(data);
  const auto train_set = io::read_split(data, "train", vocab);
  if (train_set.empty()) throw FormatError(data.string() + ": empty train split");
  const TrainConfig cfg = parse_train_config(read_json(config_path), train_set.front().features.cols(), vocab.size());
  std::vector<std::vector<TokenId>> text;
  if (cfg.pretrain_lm_steps > 0) text = io::read_text_corpus(data / "lm_corpus.txt", vocab);

  const auto start = std::chrono::steady_clock::now();
  const std::size_t every = std::max<std::size_t>(1, cfg.steps / 20);
  double window = 0.0;
  auto log_step = [&](const StepLog& s, const ModelParams&) {
    window += s.loss.total;
    if (s.step % every != 0 && s.step != cfg.steps) return;
    const std::size_t n = s.step % every == 0 ? every : s.step % every;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::fprintf(stderr, "step %zu  loss %.4f (mean of %zu)  ce_f %.4f  ce_a %.4f  ctc %.4f  %.0fs\n", s.step,
                 window / n, n, s.loss.ce_fused, s.loss.ce_preliminary, s.loss.ctc, secs);
    window = 0.0;
  };
  try {
    auto result = train(train_set, vocab, cfg, text, std::nullopt, log_step);
    save_checkpoint(result.params, vocab, out);
  } catch (const DivergenceError& e) {
    save_checkpoint(e.last_good(), vocab, out);
    std::fprintf(stderr, "last good parameters (before step %zu) saved to %s\n", e.step(), out.string().c_str());
    throw;
  }
  std::printf("saved %s\n", out.string().c_str());
  return kOk;
}

int cmd_pretrain_lm(const fs::path& corpus_path, const fs::path& ckpt, const fs::path& out, std::size_t steps,
                    std::uint64_t seed) {
  Checkpoint c = load_checkpoint(ckpt);
  const auto corpus = io::read_text_corpus(corpus_path, c.vocab);
  MlmConfig cfg;
  cfg.steps = steps;
  cfg.seed = seed;
  const auto losses = mlm_pretrain(c.params, corpus, c.vocab.unk_id(), cfg);
  if (!losses.empty()) {
    const std::size_t k = std::max<std::size_t>(1, std::min<std::size_t>(50, losses.size() / 2));
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      first += losses[i] / k;
      last += losses[losses.size() - 1 - i] / k;
    }
    std::printf("masked CE: first %zu steps %.4f, last %zu steps %.4f\n", k, first, k, last);
  }
  save_checkpoint(c.params, c.vocab, out);
  return kOk;
}

int cmd_decode(const fs::path& ckpt, const fs::path& data, const std::string& split, const std::string& mode_name,
               std::size_t beam, double mu, const fs::path& out, std::size_t threads) {
  const DecodeMode mode = parse_decode_mode(mode_name);
  const Vocabulary vocab = data_vocab(data);
  const Checkpoint c = load_for(ckpt, vocab);
  const auto utts = io::read_split(data, split, vocab);
  decode::DecodeConfig dc;
  dc.beam_width = beam;
  dc.mu = mu;
  const auto res = decode_corpus(c.params, vocab, utts, mode, dc, threads);
  std::vector<io::Transcript> hyps;
  std::size_t degraded = 0;
  for (const auto& u : res.utterances) {
    hyps.emplace_back(u.id, u.hypothesis);
    degraded += u.degraded;
  }
  io::write_transcripts(out, hyps, vocab);
  std::printf("%s decoding of %zu utterances, %.3f ms per utterance\n", mode_name.c_str(), utts.size(),
              1e3 * res.mean_seconds);
  if (degraded) std::printf("%zu utterances fell back to the best partial hypothesis\n", degraded);
  print_counts(res.counts);
  return kOk;
}

int cmd_eval(const fs::path& ref_path, const fs::path& hyp_path, const fs::path& vocab_path) {
  const Vocabulary vocab = load_vocab(vocab_path);
  const auto refs = io::read_transcripts(ref_path, vocab);
  const auto hyps = io::read_transcripts(hyp_path, vocab);
  std::map<std::string, const std::vector<TokenId>*> by_id;
  for (const auto& [id, toks] : hyps) {
    if (!by_id.emplace(id, &toks).second) throw FormatError(hyp_path.string() + ": duplicate id " + id);
  }
  std::vector<RefHypPair> pairs;
  for (const auto& [id, toks] : refs) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ContractViolation("no hypothesis for reference " + id);
    pairs.emplace_back(toks, *it->second);
    by_id.erase(it);
  }
  if (!by_id.empty()) throw ContractViolation("hypothesis " + by_id.begin()->first + " has no reference");
  print_counts(corpus_error_counts(pairs));
  return kOk;
}

int cmd_bench(const fs::path& ckpt, const fs::path& data, const std::string& split, std::size_t beam, double mu) {
  const Vocabulary vocab = data_vocab(data);
  const Checkpoint c = load_for(ckpt, vocab);
  const auto utts = io::read_split(data, split, vocab);
  decode::DecodeConfig dc;
  dc.beam_width = beam;
  dc.mu = mu;
  const BenchReport r = bench(c.params, vocab, utts, dc);
  std::printf("%-8s %14s %16s %8s\n", "mode", "ms/utterance", "passes/utterance", "CER%");
  std::printf("%-8s %14.3f %16.2f %8.2f\n", "greedy", 1e3 * r.greedy_mean_seconds, r.greedy_passes_per_utterance,
              100.0 * r.greedy_cer);
  std::printf("%-8s %14.3f %16.2f %8.2f\n", "joint", 1e3 * r.joint_mean_seconds, r.joint_passes_per_utterance,
              100.0 * r.joint_cer);
  std::printf("utterances %zu, beam %zu, joint/greedy time ratio %.2f\n", r.utterances, beam, r.ratio);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"narasr: non-autoregressive ASR toy with cached CTC/attention decoding"};
  app.require_subcommand(1);

  fs::path spec, out, data, config, corpus, ckpt, ref, hyp, vocab_path;
  std::uint64_t seed = 1;
  std::string mode = "joint", split = "test";
  std::size_t beam = 10, threads = 1, mlm_steps = MlmConfig{}.steps;
  double mu = 0.3;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  gen->add_option("--spec", spec, "JSON synthetic spec")->required()->check(CLI::ExistingFile);
  gen->add_option("--seed", seed, "generator seed")->required();
  gen->add_option("--out", out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "joint training on <data>/train");
  tr->add_option("--data", data, "corpus directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--config", config, "JSON training config")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", out, "checkpoint to write")->required();

  auto* pre = app.add_subcommand("pretrain-lm", "masked-LM pretraining of the LM half of a checkpoint");
  pre->add_option("--corpus", corpus, "text corpus, one sequence per line")->required()->check(CLI::ExistingFile);
  pre->add_option("--ckpt", ckpt, "input checkpoint")->required()->check(CLI::ExistingFile);
  pre->add_option("--out", out, "checkpoint to write")->required();
  pre->add_option("--steps", mlm_steps, "pretraining steps");
  pre->add_option("--seed", seed, "masking seed");

  auto* dec = app.add_subcommand("decode", "decode a split");
  dec->add_option("--ckpt", ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  dec->add_option("--data", data, "corpus directory")->required()->check(CLI::ExistingDirectory);
  dec->add_option("--mode", mode, "greedy or joint")->required();
  dec->add_option("--beam", beam, "beam width");
  dec->add_option("--mu", mu, "CTC weight in joint mode");
  dec->add_option("--out", out, "hypothesis file")->required();
  dec->add_option("--split", split, "split name inside --data");
  dec->add_option("--threads", threads, "decoding workers, 0 = all cores");

  auto* ev = app.add_subcommand("eval", "score hypotheses against references");
  ev->add_option("--ref", ref, "reference transcripts")->required()->check(CLI::ExistingFile);
  ev->add_option("--hyp", hyp, "hypothesis transcripts")->required()->check(CLI::ExistingFile);
  ev->add_option("--vocab", vocab_path, "vocabulary (default: vocab.txt next to --ref)");

  auto* be = app.add_subcommand("bench", "time greedy and joint decoding");
  be->add_option("--ckpt", ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  be->add_option("--data", data, "corpus directory")->required()->check(CLI::ExistingDirectory);
  be->add_option("--beam", beam, "beam width")->required();
  be->add_option("--mu", mu, "CTC weight");
  be->add_option("--split", split, "split name inside --data");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kFormat;
  }

  try {
    if (*gen) return cmd_gen_data(spec, seed, out);
    if (*tr) return cmd_train(data, config, out);
    if (*pre) return cmd_pretrain_lm(corpus, ckpt, out, mlm_steps, seed);
    if (*dec) return cmd_decode(ckpt, data, split, mode, beam, mu, out, threads);
    if (*ev) return cmd_eval(ref, hyp, vocab_path.empty() ? ref.parent_path() / "vocab.txt" : vocab_path);
    if (*be) return cmd_bench(ckpt, data, split, beam, mu);
  } catch (const TrainingDivergence& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return kDivergence;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return kFormat;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kFormat;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kFormat;
  } catch (const Error& e) {
    // contract, dimension, argument and numeric failures
    std::fprintf(stderr, "contract violation: %s\n", e.what());
    return kContract;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kOther;
  }
  return kOther;
}
