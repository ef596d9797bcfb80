#include "narasr/dataset.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "narasr/errors.hpp"

namespace narasr::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

constexpr char kFeatMagic[8] = {'N', 'A', 'R', 'F', 'E', 'A', 'T', '1'};

std::vector<TokenId> parse_tokens(const std::string& text, const Vocabulary& vocab,
                                  const std::filesystem::path& path, std::size_t line_no) {
  std::vector<TokenId> ids;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    if (!vocab.contains(tok)) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": unknown token '" + tok + "'");
    }
    ids.push_back(vocab.id(tok));
  }
  return ids;
}

}  // namespace

void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::string& out, std::uint64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); }
void put_f64(std::string& out, double v) { out.append(reinterpret_cast<const char*>(&v), 8); }

std::uint32_t get_u32(const char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}
std::uint64_t get_u64(const char* p) {
  std::uint64_t v;
  std::memcpy(&v, p, 8);
  return v;
}
double get_f64(const char* p) {
  double v;
  std::memcpy(&v, p, 8);
  return v;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

void write_transcripts(const std::filesystem::path& path, const std::vector<Transcript>& lines,
                       const Vocabulary& vocab) {
  std::string text;
  for (const auto& [id, tokens] : lines) {
    text += id;
    text += '\t';
    text += vocab.decode(tokens);
    text += '\n';
  }
  write_file(path, text);
}

std::vector<Transcript> read_transcripts(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<Transcript> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected '<id>\\t<tokens>'");
    }
    out.emplace_back(line.substr(0, tab), parse_tokens(line.substr(tab + 1), vocab, path, line_no));
  }
  return out;
}

void write_split(const std::filesystem::path& dir, const std::string& name,
                 const std::vector<Utterance>& utterances, const Vocabulary& vocab) {
  std::vector<Transcript> lines;
  std::string feats(kFeatMagic, sizeof kFeatMagic);
  put_u64(feats, utterances.size());
  for (const auto& u : utterances) {
    lines.emplace_back(u.id, u.tokens);
    put_u32(feats, static_cast<std::uint32_t>(u.id.size()));
    feats += u.id;
    put_u64(feats, u.features.rows());
    put_u64(feats, u.features.cols());
    for (double v : u.features.values()) put_f64(feats, v);
  }
  write_transcripts(dir / (name + ".txt"), lines, vocab);
  write_file(dir / (name + ".feats"), feats);
}

std::vector<Utterance> read_split(const std::filesystem::path& dir, const std::string& name,
                                  const Vocabulary& vocab) {
  const auto lines = read_transcripts(dir / (name + ".txt"), vocab);
  const auto feat_path = dir / (name + ".feats");
  const std::string bytes = read_file(feat_path);
  auto fail = [&](const std::string& what) { throw FormatError(feat_path.string() + ": " + what); };
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kFeatMagic, 8) != 0) fail("bad magic");
  const std::uint64_t count = get_u64(bytes.data() + 8);
  if (count != lines.size()) {
    fail(std::to_string(count) + " feature records for " + std::to_string(lines.size()) + " transcripts");
  }
  std::size_t pos = 16;
  auto need = [&](std::size_t n) {
    if (bytes.size() - pos < n) fail("truncated record");
  };
  std::vector<Utterance> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    need(4);
    const std::uint32_t id_len = get_u32(bytes.data() + pos);
    pos += 4;
    need(id_len);
    std::string id = bytes.substr(pos, id_len);
    pos += id_len;
    if (id != lines[i].first) fail("record " + std::to_string(i) + " id '" + id + "' != transcript id '" + lines[i].first + "'");
    need(16);
    const std::uint64_t rows = get_u64(bytes.data() + pos);
    const std::uint64_t cols = get_u64(bytes.data() + pos + 8);
    pos += 16;
    if (cols != 0 && rows > (bytes.size() - pos) / 8 / cols) fail("truncated features for " + id);
    std::vector<double> data(rows * cols);
    for (std::size_t k = 0; k < data.size(); ++k) data[k] = get_f64(bytes.data() + pos + 8 * k);
    pos += 8 * data.size();
    out.push_back(Utterance{std::move(id), Tensor(rows, cols, std::move(data)), lines[i].second});
  }
  if (pos != bytes.size()) fail("trailing bytes after last record");
  return out;
}

void write_text_corpus(const std::filesystem::path& path, const std::vector<std::vector<TokenId>>& corpus,
                       const Vocabulary& vocab) {
  std::string text;
  for (const auto& seq : corpus) {
    text += vocab.decode(seq);
    text += '\n';
  }
  write_file(path, text);
}

std::vector<std::vector<TokenId>> read_text_corpus(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::vector<TokenId>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto ids = parse_tokens(line, vocab, path, line_no);
    if (!ids.empty()) out.push_back(std::move(ids));
  }
  return out;
}

void write_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus) {
  std::filesystem::create_directories(dir);
  save_vocab(corpus.vocab, dir / "vocab.txt");
  write_split(dir, "train", corpus.train, corpus.vocab);
  write_split(dir, "dev", corpus.dev, corpus.vocab);
  write_split(dir, "test", corpus.test, corpus.vocab);
  write_text_corpus(dir / "lm_corpus.txt", corpus.text, corpus.vocab);
}

}  // namespace narasr::io
