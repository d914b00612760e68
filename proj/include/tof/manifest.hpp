#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "tof/core_model.hpp"
#include "tof/search.hpp"

namespace tof {

/// Event log as JSON Lines, one compact object per line, trailing newline.
std::string events_jsonl(const std::vector<nlohmann::json>& events);

/// Git blob object id of `content`: sha1("blob <len>\0" + content), lower hex.
std::string git_blob_sha1(const std::string& content);

/// Run manifest: config echo, best path, scores, ledger totals and the hash
/// of the event log. Holds no wall-clock data, so a rerun with the same
/// configuration reproduces it byte for byte.
nlohmann::json build_manifest(const RunConfig& config, const SearchResult& result, const std::string& event_log);

/// True when the stored event_log hash matches `event_log`.
bool verify_manifest(const nlohmann::json& manifest, const std::string& event_log);

struct RunFiles {
  std::filesystem::path manifest;
  std::filesystem::path events;
  std::filesystem::path timing;
};

/// Writes manifest.json, events.jsonl and timing.json into `dir`.
/// `timing` carries the wall-clock measurements kept out of the manifest.
RunFiles write_run(const std::filesystem::path& dir, const RunConfig& config, const SearchResult& result,
                   const nlohmann::json& timing);

/// Pretty-printed JSON with a trailing newline.
std::string dump_pretty(const nlohmann::json& doc);

}  // namespace tof
