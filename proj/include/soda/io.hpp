#pragma once

// On-disk artifacts: JSONL datasets, binary checkpoints, atomic writes and
// the SHA-256 manifest used by `verify`. Byte layouts are in FORMATS.md.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "soda/lm.hpp"
#include "soda/objectives.hpp"
#include "soda/pipeline.hpp"

namespace soda {

namespace fs = std::filesystem;

/// Writes to a sibling temp file, flushes, then renames over `path`, so a
/// reader never sees a partial file. Creates parent directories.
void atomic_write(const fs::path& path, std::string_view bytes);
std::string read_file(const fs::path& path);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const fs::path& path);

// Datasets: one JSON object per line.
std::string dataset_to_jsonl(const Dataset& data);
Dataset dataset_from_jsonl(std::string_view text);
std::string preferences_to_jsonl(const std::vector<PreferencePair>& pairs);
std::vector<PreferencePair> preferences_from_jsonl(std::string_view text);
std::vector<Tokens> prompts_from_jsonl(std::string_view text);
std::string prompts_to_jsonl(const std::vector<Tokens>& prompts);

struct Checkpoint {
  std::string stage;  // q0, q_w, q_soda, q_gad, disc, ...
  ModelParams params;
};

inline constexpr std::uint32_t kCheckpointFormat = 1;

/// Little-endian binary blob; round-trips bit-exactly.
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const fs::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const fs::path& path);

/// Relative file path -> sha256 for every regular file under `dir`
/// (manifest.json itself excluded).
std::map<std::string, std::string> hash_tree(const fs::path& dir);
void write_manifest(const fs::path& dir);

struct VerifyResult {
  std::vector<std::string> mismatched;  // hash differs
  std::vector<std::string> missing;     // listed but absent
  bool ok() const { return mismatched.empty() && missing.empty(); }
};
VerifyResult verify_manifest(const fs::path& dir);

}  // namespace soda
