#include "tof/manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <fstream>

#include "tof/errors.hpp"

namespace tof {

std::string events_jsonl(const std::vector<nlohmann::json>& events) {
  std::string out;
  for (const auto& e : events) {
    out += e.dump();
    out += '\n';
  }
  return out;
}

std::string git_blob_sha1(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw RunError("cannot allocate a digest context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw RunError("sha1 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

nlohmann::json build_manifest(const RunConfig& config, const SearchResult& result, const std::string& event_log) {
  nlohmann::json path = nlohmann::json::array();
  for (const auto& n : result.best_path.nodes) {
    path.push_back({{"node_id", n.node_id}, {"seed", n.seed}, {"t", n.frame_index}, {"stage", to_string(n.stage)},
                    {"h", n.local_reward}, {"s", n.total_score}});
  }
  nlohmann::json finalists = nlohmann::json::array();
  for (const auto& f : result.finalists) {
    finalists.push_back({{"leaf", f.leaf},
                         {"s", f.accumulated_score},
                         {"H", f.aggregated_score},
                         {"raw", f.weighted_raw ? nlohmann::json(*f.weighted_raw) : nlohmann::json(nullptr)}});
  }
  return {{"format", "tof-run-manifest/1"},
          {"algorithm", to_string(result.algorithm)},
          {"config", to_json(config)},
          {"best_path", path},
          {"scores",
           {{"final", result.best_path.final_score},
            {"aggregated", result.aggregated_score},
            {"accumulated", result.accumulated_score}}},
          {"finalists", finalists},
          {"ledger", to_json(result.ledger.totals())},
          {"faults", result.faults},
          {"nondeterministic_backends", result.nondeterministic_backends},
          {"event_log", {{"file", "events.jsonl"}, {"lines", result.events.size()}, {"sha1", git_blob_sha1(event_log)}}}};
}

bool verify_manifest(const nlohmann::json& manifest, const std::string& event_log) {
  if (!manifest.contains("event_log")) return false;
  const nlohmann::json& e = manifest["event_log"];
  if (!e.contains("sha1") || !e.contains("lines") || !e["lines"].is_number_integer()) return false;
  const auto lines = std::count(event_log.begin(), event_log.end(), '\n');
  return e["sha1"] == git_blob_sha1(event_log) && e["lines"].get<std::int64_t>() == lines;
}

std::string dump_pretty(const nlohmann::json& doc) { return doc.dump(2) + "\n"; }

namespace {

void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw RunError("cannot write " + p.string());
  out << content;
  if (!out) throw RunError("write failed: " + p.string());
}

}  // namespace

RunFiles write_run(const std::filesystem::path& dir, const RunConfig& config, const SearchResult& result,
                   const nlohmann::json& timing) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw RunError("cannot create " + dir.string() + ": " + ec.message());
  RunFiles files{dir / "manifest.json", dir / "events.jsonl", dir / "timing.json"};
  const std::string log = events_jsonl(result.events);
  write_file(files.events, log);
  write_file(files.manifest, dump_pretty(build_manifest(config, result, log)));
  write_file(files.timing, dump_pretty(timing));
  return files;
}

}  // namespace tof
