#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "narasr/tensor.hpp"
#include "narasr/vocab.hpp"

namespace narasr {

struct Utterance {
  std::string id;
  Tensor features;  // T x d_in
  std::vector<TokenId> tokens;
};

// Parameters of the synthetic speech task. Transcripts follow a random
// first-order Markov chain over the real tokens; each token is rendered as its
// prototype vector repeated for a random number of frames, plus noise.
struct SyntheticSpec {
  std::size_t vocab_size = 23;  // including blank, unk and eos
  std::size_t feature_dim = 16;
  std::size_t min_frames_per_token = 2;
  std::size_t max_frames_per_token = 4;
  double noise_std = 0.3;
  std::size_t min_tokens = 3;
  std::size_t max_tokens = 8;
  // Leading and trailing silence, each uniform in [0, max_silence_frames].
  std::size_t max_silence_frames = 0;
  // Larger values make the transition rows peakier.
  double markov_sharpness = 2.0;
  // Adjacent identical tokens render as one longer segment and are ambiguous.
  bool allow_repeats = false;
  std::size_t train_size = 2000;
  std::size_t dev_size = 200;
  std::size_t test_size = 200;
  std::size_t text_corpus_size = 4000;

  void validate() const;
  Vocabulary vocabulary() const;
};

struct SyntheticCorpus {
  Vocabulary vocab;
  std::vector<Utterance> train;
  std::vector<Utterance> dev;
  std::vector<Utterance> test;
  // Token sequences from the same chain, for LM pretraining.
  std::vector<std::vector<TokenId>> text;
};

SyntheticCorpus gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

}  // namespace narasr
