// jt/data.cpp

#include "jt/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace jt {

std::vector<int> Tokenizer::encode(const std::string& text) const {
  JT_CHECK(!text.empty(), "tokenizer: empty string");
  std::vector<int> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(char_to_id(c));
  return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(id_to_char(id));
  return out;
}

int Tokenizer::char_to_id(char c) const {
  if (c >= 'a' && c <= 'z') return c - 'a';
  if (c == '\'') return 26;
  if (c == kBoundaryChar || c == ' ') return kBoundaryId;
  JT_CHECK(false, "tokenizer: character '" << c << "' outside the alphabet");
  return -1;
}

char Tokenizer::id_to_char(int id) const {
  JT_CHECK(id >= 0 && id < kVocabSize - 1,
           "tokenizer: id " << id << " not decodable (blank or out of range)");
  if (id < 26) return static_cast<char>('a' + id);
  if (id == 26) return '\'';
  return kBoundaryChar;
}

double token_frequency(int token_id, int sample_rate) {
  // evenly spread over (40 Hz, 0.47·sr); distinct per token
  const double lo = 40.0;
  const double hi = 0.47 * sample_rate;
  return lo + (hi - lo) * static_cast<double>(token_id) /
                  static_cast<double>(Tokenizer::kVocabSize - 1);
}

Corpus generate_corpus(const CorpusSpec& spec) {
  JT_CHECK(spec.num_utts > 0, "generate_corpus: empty corpus requested");
  JT_CHECK(spec.word_len_min >= 1 && spec.word_len_max >= spec.word_len_min &&
               spec.words_min >= 1 && spec.words_max >= spec.words_min &&
               spec.word_vocab_size >= 1 && spec.samples_per_token >= 1,
           "generate_corpus: inconsistent spec");
  Rng rng(spec.seed);

  // deterministic word vocabulary
  std::vector<std::string> vocab;
  std::set<std::string> seen;
  while (static_cast<int>(vocab.size()) < spec.word_vocab_size) {
    int len = spec.word_len_min +
              static_cast<int>(rng.uniform_int(
                  static_cast<std::uint64_t>(spec.word_len_max - spec.word_len_min + 1)));
    std::string w;
    for (int i = 0; i < len; ++i)
      w.push_back(static_cast<char>('a' + rng.uniform_int(26)));
    if (seen.insert(w).second) vocab.push_back(w);
  }

  Tokenizer tok;
  Corpus corpus;
  corpus.sample_rate = spec.sample_rate;
  for (int u = 0; u < spec.num_utts; ++u) {
    int nwords = spec.words_min +
                 static_cast<int>(rng.uniform_int(
                     static_cast<std::uint64_t>(spec.words_max - spec.words_min + 1)));
    std::string transcript;
    for (int w = 0; w < nwords; ++w) {
      if (w) transcript.push_back(Tokenizer::kBoundaryChar);
      transcript += vocab[static_cast<size_t>(rng.uniform_int(vocab.size()))];
    }
    Utterance utt;
    utt.id = spec.id_prefix + std::to_string(u);
    utt.sample_rate = spec.sample_rate;
    utt.transcript = transcript;
    for (int id : tok.encode(transcript)) {
      const double freq = token_frequency(id, spec.sample_rate);
      for (int n = 0; n < spec.samples_per_token; ++n)
        utt.samples.push_back(
            std::sin(2.0 * M_PI * freq * n / spec.sample_rate));
    }
    if (spec.noise_sigma > 0.0)
      for (double& s : utt.samples) s += spec.noise_sigma * rng.normal();
    corpus.utts.push_back(std::move(utt));
  }
  return corpus;
}

Utterance normalize(const Utterance& u) {
  JT_CHECK(!u.samples.empty(), "normalize: empty utterance " << u.id);
  const double n = static_cast<double>(u.samples.size());
  double mean = 0;
  for (double s : u.samples) mean += s;
  mean /= n;
  double var = 0;
  for (double s : u.samples) var += (s - mean) * (s - mean);
  var /= n;
  Utterance out = u;
  if (var < 1e-8) {  // constant signal: guard active, output zeros
    for (double& s : out.samples) s = 0.0;
    return out;
  }
  const double denom = std::sqrt(var);
  for (double& s : out.samples) s = (s - mean) / denom;
  return out;
}

Corpus filter_by_duration(const Corpus& corpus, double min_s, double max_s) {
  JT_CHECK(min_s <= max_s, "filter_by_duration: min " << min_s << " > max " << max_s);
  Corpus out;
  out.sample_rate = corpus.sample_rate;
  for (const Utterance& u : corpus.utts)
    if (u.duration_s() >= min_s && u.duration_s() <= max_s) out.utts.push_back(u);
  JT_CHECK(!out.empty(), "filter_by_duration: no utterance within ["
                             << min_s << "s, " << max_s << "s]");
  return out;
}

BatchPlan plan_batches(const Corpus& corpus, double budget_seconds, Rng& rng) {
  JT_CHECK(!corpus.empty(), "plan_batches: empty corpus");
  std::vector<int> order(corpus.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  for (size_t i = 0; i + 1 < order.size(); ++i) {
    size_t j = i + static_cast<size_t>(rng.uniform_int(order.size() - i));
    std::swap(order[i], order[j]);
  }
  BatchPlan plan;
  std::vector<int> cur;
  double cur_dur = 0;
  for (int idx : order) {
    double d = corpus.utts[static_cast<size_t>(idx)].duration_s();
    JT_CHECK(d <= budget_seconds, "plan_batches: utterance "
                                      << corpus.utts[static_cast<size_t>(idx)].id
                                      << " (" << d << "s) exceeds the batch budget "
                                      << budget_seconds << "s");
    if (cur_dur + d > budget_seconds && !cur.empty()) {
      plan.batches.push_back(cur);
      cur.clear();
      cur_dur = 0;
    }
    cur.push_back(idx);
    cur_dur += d;
  }
  if (!cur.empty()) plan.batches.push_back(cur);
  return plan;
}

// ---- on-disk format ---------------------------------------------------

namespace {
constexpr char kAudioMagic[4] = {'J', 'T', 'A', 'U'};
constexpr std::uint32_t kAudioVersion = 1;
constexpr int kManifestVersion = 1;

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
}
}  // namespace

void save_corpus(const Corpus& corpus, const std::string& dir) {
  JT_CHECK(!corpus.empty(), "save_corpus: empty corpus");
  fs::create_directories(dir);
  json manifest;
  manifest["version"] = kManifestVersion;
  manifest["sample_rate"] = corpus.sample_rate;
  json utts = json::array();
  for (const Utterance& u : corpus.utts) {
    std::string rel = u.id + ".jtau";
    utts.push_back({{"id", u.id},
                    {"duration_s", u.duration_s()},
                    {"transcript", u.transcript},
                    {"path", rel}});
    std::ofstream os(fs::path(dir) / rel, std::ios::binary);
    JT_CHECK(os.good(), "save_corpus: cannot write " << rel);
    os.write(kAudioMagic, 4);
    write_pod(os, kAudioVersion);
    write_pod(os, static_cast<std::uint32_t>(u.sample_rate));
    write_pod(os, static_cast<std::uint64_t>(u.samples.size()));
    os.write(reinterpret_cast<const char*>(u.samples.data()),
             static_cast<std::streamsize>(u.samples.size() * sizeof(double)));
  }
  manifest["utterances"] = utts;
  std::ofstream mf(fs::path(dir) / "manifest.json");
  mf << manifest.dump(2) << "\n";
}

Corpus load_corpus(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  JT_CHECK(mf.good(), "load_corpus: no manifest.json in " << dir);
  json manifest = json::parse(mf);
  JT_CHECK(manifest.at("version").get<int>() == kManifestVersion,
           "load_corpus: unsupported manifest version");
  Corpus corpus;
  corpus.sample_rate = manifest.at("sample_rate").get<int>();
  for (const auto& ju : manifest.at("utterances")) {
    Utterance u;
    u.id = ju.at("id").get<std::string>();
    u.transcript = ju.at("transcript").get<std::string>();
    std::ifstream is(fs::path(dir) / ju.at("path").get<std::string>(),
                     std::ios::binary);
    JT_CHECK(is.good(), "load_corpus: missing sample file for " << u.id);
    char magic[4];
    is.read(magic, 4);
    JT_CHECK(std::equal(magic, magic + 4, kAudioMagic),
             "load_corpus: bad magic in sample file for " << u.id);
    std::uint32_t version = 0, sr = 0;
    std::uint64_t count = 0;
    read_pod(is, version);
    read_pod(is, sr);
    read_pod(is, count);
    JT_CHECK(version == kAudioVersion, "load_corpus: unsupported sample file version");
    u.sample_rate = static_cast<int>(sr);
    u.samples.resize(count);
    is.read(reinterpret_cast<char*>(u.samples.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    JT_CHECK(is.good(), "load_corpus: truncated sample file for " << u.id);
    corpus.utts.push_back(std::move(u));
  }
  JT_CHECK(!corpus.empty(), "load_corpus: empty corpus in " << dir);
  return corpus;
}

}  // namespace jt
