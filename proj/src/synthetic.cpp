#include "narasr/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include "narasr/errors.hpp"

namespace narasr {

void SyntheticSpec::validate() const {
  if (vocab_size < 4) throw ConfigError("synthetic vocab_size must be at least 4");
  if (feature_dim < 1) throw ConfigError("synthetic feature_dim must be positive");
  if (min_frames_per_token < 2 || max_frames_per_token < min_frames_per_token) {
    throw ConfigError("frames per token must satisfy 2 <= min <= max");
  }
  if (min_tokens < 1 || max_tokens < min_tokens) throw ConfigError("token counts must satisfy 1 <= min <= max");
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative");
  if (!(markov_sharpness >= 0.0)) throw ConfigError("markov_sharpness must be non-negative");
}

Vocabulary SyntheticSpec::vocabulary() const {
  std::vector<std::string> symbols;
  for (std::size_t i = 0; i + 3 < vocab_size; ++i) {
    // a..z, then two-letter names
    if (i < 26) {
      symbols.emplace_back(1, static_cast<char>('a' + i));
    } else {
      symbols.push_back(std::string(1, static_cast<char>('a' + (i / 26) - 1)) +
                        static_cast<char>('a' + i % 26));
    }
  }
  return Vocabulary::with_symbols(symbols);
}

namespace {

class Generator {
 public:
  Generator(const SyntheticSpec& spec, std::uint64_t seed)
      : spec_(spec), vocab_(spec.vocabulary()), rng_(seed) {
    first_real_ = 2;
    real_count_ = vocab_.size() - 3;
    std::normal_distribution<double> normal(0.0, 1.0);
    prototypes_ = Tensor(vocab_.size(), spec.feature_dim);
    for (double& v : prototypes_.values()) v = normal(rng_);
    transitions_.resize(real_count_);
    for (std::size_t i = 0; i < real_count_; ++i) {
      auto& row = transitions_[i];
      row.resize(real_count_);
      for (double& w : row) w = std::exp(spec.markov_sharpness * normal(rng_));
      if (!spec.allow_repeats && real_count_ > 1) row[i] = 0.0;
    }
  }

  const Vocabulary& vocab() const { return vocab_; }

  std::vector<TokenId> transcript() {
    std::uniform_int_distribution<std::size_t> len(spec_.min_tokens, spec_.max_tokens);
    std::uniform_int_distribution<std::size_t> start(0, real_count_ - 1);
    const std::size_t n = len(rng_);
    std::vector<TokenId> out;
    std::size_t cur = start(rng_);
    out.push_back(first_real_ + cur);
    while (out.size() < n) {
      std::discrete_distribution<std::size_t> next(transitions_[cur].begin(), transitions_[cur].end());
      cur = next(rng_);
      out.push_back(first_real_ + cur);
    }
    return out;
  }

  Utterance utterance(const std::string& id) {
    Utterance u;
    u.id = id;
    u.tokens = transcript();
    std::uniform_int_distribution<std::size_t> dur(spec_.min_frames_per_token, spec_.max_frames_per_token);
    std::uniform_int_distribution<std::size_t> sil(0, spec_.max_silence_frames);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<TokenId> frames;
    const std::size_t lead = spec_.max_silence_frames ? sil(rng_) : 0;
    frames.insert(frames.end(), lead, vocab_.blank_id());
    for (TokenId t : u.tokens) frames.insert(frames.end(), dur(rng_), t);
    const std::size_t trail = spec_.max_silence_frames ? sil(rng_) : 0;
    frames.insert(frames.end(), trail, vocab_.blank_id());

    u.features = Tensor(frames.size(), spec_.feature_dim);
    for (std::size_t f = 0; f < frames.size(); ++f) {
      auto row = u.features.row(f);
      // silence renders as pure noise
      const bool silent = frames[f] == vocab_.blank_id();
      for (std::size_t c = 0; c < row.size(); ++c) {
        const double base = silent ? 0.0 : prototypes_(frames[f], c);
        row[c] = spec_.noise_std > 0.0 ? base + spec_.noise_std * noise(rng_) : base;
      }
    }
    return u;
  }

 private:
  const SyntheticSpec& spec_;
  Vocabulary vocab_;
  std::mt19937_64 rng_;
  TokenId first_real_ = 2;
  std::size_t real_count_ = 0;
  Tensor prototypes_;
  std::vector<std::vector<double>> transitions_;
};

std::string utterance_id(const char* split, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%06zu", split, i);
  return buf;
}

}  // namespace

SyntheticCorpus gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  Generator gen(spec, seed);
  SyntheticCorpus corpus{gen.vocab(), {}, {}, {}, {}};
  for (std::size_t i = 0; i < spec.train_size; ++i) corpus.train.push_back(gen.utterance(utterance_id("train", i)));
  for (std::size_t i = 0; i < spec.dev_size; ++i) corpus.dev.push_back(gen.utterance(utterance_id("dev", i)));
  for (std::size_t i = 0; i < spec.test_size; ++i) corpus.test.push_back(gen.utterance(utterance_id("test", i)));
  for (std::size_t i = 0; i < spec.text_corpus_size; ++i) corpus.text.push_back(gen.transcript());
  return corpus;
}

}  // namespace narasr
