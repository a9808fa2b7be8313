#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>
#include <unistd.h>

#include "json.hpp"
#include "soda/error.hpp"
#include "soda/io.hpp"

namespace soda {

using nlohmann::json;

void atomic_write(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) fail(ErrorCode::Io, "cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) fail(ErrorCode::Io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    fail(ErrorCode::Io, "cannot rename into " + path.string());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    fail(ErrorCode::Io, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 15];
  }
  return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

namespace {

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    const std::string_view line = text.substr(start, end - start);
    start = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      fail(ErrorCode::InvalidInput, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

Tokens tokens_field(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_array()) {
    fail(ErrorCode::InvalidInput, std::string("missing token array '") + key + "'");
  }
  return j.at(key).get<Tokens>();
}

}  // namespace

std::string dataset_to_jsonl(const Dataset& data) {
  std::string out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const json j = {{"prompt", data.examples[i].prompt},
                    {"response", data.examples[i].response},
                    {"source", source_name(data.source)},
                    {"seed", i < data.seeds.size() ? data.seeds[i] : 0}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

Dataset dataset_from_jsonl(std::string_view text) {
  Dataset data;
  bool first = true;
  for_each_line(text, [&](const json& j) {
    const ResponseSource source = parse_source(j.at("source").get<std::string>());
    if (first) {
      data.source = source;
      first = false;
    } else if (source != data.source) {
      fail(ErrorCode::InvalidInput, "dataset mixes response sources");
    }
    data.examples.push_back(SequenceExample::make(tokens_field(j, "prompt"), tokens_field(j, "response")));
    data.seeds.push_back(j.at("seed").get<std::uint64_t>());
  });
  return data;
}

std::string preferences_to_jsonl(const std::vector<PreferencePair>& pairs) {
  std::string out;
  for (const PreferencePair& p : pairs) {
    const json j = {{"prompt", p.prompt},
                    {"chosen", p.chosen},
                    {"rejected", p.rejected},
                    {"chosen_source", source_name(p.chosen_source)},
                    {"rejected_source", source_name(p.rejected_source)}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<PreferencePair> preferences_from_jsonl(std::string_view text) {
  std::vector<PreferencePair> pairs;
  for_each_line(text, [&](const json& j) {
    pairs.push_back(PreferencePair{tokens_field(j, "prompt"), tokens_field(j, "chosen"),
                                   tokens_field(j, "rejected"),
                                   parse_source(j.at("chosen_source").get<std::string>()),
                                   parse_source(j.at("rejected_source").get<std::string>())});
  });
  return pairs;
}

std::string prompts_to_jsonl(const std::vector<Tokens>& prompts) {
  std::string out;
  for (const Tokens& p : prompts) {
    out += json{{"prompt", p}}.dump();
    out += '\n';
  }
  return out;
}

std::vector<Tokens> prompts_from_jsonl(std::string_view text) {
  std::vector<Tokens> prompts;
  for_each_line(text, [&](const json& j) { prompts.push_back(tokens_field(j, "prompt")); });
  return prompts;
}

// ---- checkpoints -----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'O', 'D', 'A', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  template <typename T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    out_.append(reinterpret_cast<const char*>(raw), sizeof(T));
  }
  void bytes(std::string_view s) { out_.append(s); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, in_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    const std::string_view s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) fail(ErrorCode::Io, "checkpoint is truncated");
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  const ModelParams& p = ckpt.params;
  Writer w;
  w.bytes({kMagic, sizeof(kMagic)});
  w.put<std::uint32_t>(kCheckpointFormat);
  w.put<std::uint32_t>(p.architecture() == Architecture::Tabular ? 0 : 1);
  w.put<std::int32_t>(p.vocab_size());
  w.put<std::int32_t>(p.dims().dim);
  w.put<std::int32_t>(p.dims().hidden);
  w.put<std::int32_t>(p.dims().context);
  w.put<std::uint64_t>(p.version());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.stage.size()));
  w.bytes(ckpt.stage);
  w.put<std::uint64_t>(p.size());
  for (double v : p.values()) w.put<double>(v);
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.bytes(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) {
    fail(ErrorCode::Io, "not a checkpoint (bad magic)");
  }
  const auto format = r.get<std::uint32_t>();
  if (format != kCheckpointFormat) {
    fail(ErrorCode::Migration, "checkpoint format " + std::to_string(format) + " is not supported");
  }
  const auto arch_tag = r.get<std::uint32_t>();
  if (arch_tag > 1) fail(ErrorCode::Io, "unknown architecture tag in checkpoint");
  const auto vocab = r.get<std::int32_t>();
  TransformerDims dims;
  dims.dim = r.get<std::int32_t>();
  dims.hidden = r.get<std::int32_t>();
  dims.context = r.get<std::int32_t>();
  const auto version = r.get<std::uint64_t>();
  const auto tag_len = r.get<std::uint32_t>();
  Checkpoint out;
  out.stage = std::string(r.bytes(tag_len));
  const auto count = r.get<std::uint64_t>();
  if (count > (bytes.size() / sizeof(double))) fail(ErrorCode::Io, "checkpoint is truncated");
  std::vector<double> values(count);
  for (double& v : values) v = r.get<double>();
  if (!r.done()) fail(ErrorCode::Io, "trailing bytes after checkpoint payload");
  out.params = ModelParams::from_parts(arch_tag == 0 ? Architecture::Tabular : Architecture::TinyTransformer,
                                       vocab, dims, std::move(values), version);
  return out;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  atomic_write(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const fs::path& path) { return decode_checkpoint(read_file(path)); }

// ---- manifest --------------------------------------------------------------

std::map<std::string, std::string> hash_tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  if (!fs::is_directory(dir)) fail(ErrorCode::Io, dir.string() + " is not a directory");
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), dir).generic_string();
    if (rel == "manifest.json" || rel.find(".tmp.") != std::string::npos) continue;
    out.emplace(rel, sha256_file(entry.path()));
  }
  return out;
}

void write_manifest(const fs::path& dir) {
  json files = json::object();
  for (const auto& [name, hash] : hash_tree(dir)) files[name] = hash;
  atomic_write(dir / "manifest.json", json{{"files", files}}.dump(2) + "\n");
}

VerifyResult verify_manifest(const fs::path& dir) {
  const json manifest = [&] {
    try {
      return json::parse(read_file(dir / "manifest.json"));
    } catch (const json::exception& e) {
      fail(ErrorCode::Io, std::string("unreadable manifest: ") + e.what());
    }
  }();
  VerifyResult result;
  for (const auto& [name, hash] : manifest.at("files").items()) {
    const fs::path file = dir / name;
    if (!fs::exists(file)) {
      result.missing.push_back(name);
    } else if (sha256_file(file) != hash.get<std::string>()) {
      result.mismatched.push_back(name);
    }
  }
  return result;
}

}  // namespace soda
