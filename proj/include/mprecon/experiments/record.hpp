#pragma once

// Result records: metric tables, scalars and verdicts of one scenario run,
// written as JSON plus one CSV per table. Files are staged under temporary
// names and renamed into place only once every file has been written.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "../error.hpp"
#include "config.hpp"

namespace mprecon::experiments {

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  void add(std::vector<double> row) {
    mprecon::detail::require(row.size() == columns.size(), "table: row width differs from the column count");
    rows.push_back(std::move(row));
  }
  std::vector<double> column(std::size_t c) const {
    std::vector<double> out;
    for (const auto& r : rows) out.push_back(r.at(c));
    return out;
  }
  bool operator==(const Table&) const = default;
};

struct ResultRecord {
  std::string scenario;
  std::string kind;
  std::string timestamp;
  std::string configHash;
  std::map<std::string, Table> tables;
  std::map<std::string, double> scalars;
  std::map<std::string, bool> verdicts;
  std::vector<std::string> notes;

  bool all_pass() const {
    for (const auto& [k, v] : verdicts)
      if (!v) return false;
    return true;
  }
};

// ---------------------------------------------------------------------------
// Hashing

inline std::string sha1_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw InternalError("sha1: cannot allocate digest context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, data.data(), data.size()) == 1 && EVP_DigestFinal_ex(ctx, md, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw InternalError("sha1: digest failed");
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
  return hex;
}

// Git blob id of the canonical serialization.
inline std::string config_hash(const ScenarioConfig& c) {
  const std::string body = serialize_config(c);
  std::string blob = "blob " + std::to_string(body.size());
  blob.push_back('\0');
  return sha1_hex(blob + body);
}

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// Encodings

inline std::string format_value(double v) { return fmt::format("{:.17g}", v); }

inline std::string table_to_csv(const Table& t) {
  std::string out;
  for (std::size_t c = 0; c < t.columns.size(); ++c) out += (c ? "," : "") + t.columns[c];
  out += '\n';
  for (const auto& r : t.rows) {
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c) out += ',';
      out += format_value(r[c]);
    }
    out += '\n';
  }
  return out;
}

inline std::string verdicts_to_csv(const ResultRecord& r) {
  std::string out = "verdict,pass\n";
  for (const auto& [k, v] : r.verdicts) out += k + (v ? ",1\n" : ",0\n");
  return out;
}

inline std::string scalars_to_csv(const ResultRecord& r) {
  std::string out = "name,value\n";
  for (const auto& [k, v] : r.scalars) out += k + "," + format_value(v) + "\n";
  return out;
}

inline json to_json(const Table& t) {
  json rows = json::array();
  for (const auto& r : t.rows) rows.push_back(r);
  return {{"columns", t.columns}, {"rows", rows}};
}

inline json to_json(const ResultRecord& r) {
  json tables = json::object();
  for (const auto& [k, t] : r.tables) tables[k] = to_json(t);
  return {{"scenario", r.scenario}, {"kind", r.kind},       {"timestamp", r.timestamp}, {"configHash", r.configHash},
          {"tables", tables},       {"scalars", r.scalars}, {"verdicts", r.verdicts},   {"notes", r.notes},
          {"pass", r.all_pass()}};
}

inline ResultRecord record_from_json(const json& j) {
  try {
    ResultRecord r;
    r.scenario = j.at("scenario").get<std::string>();
    r.kind = j.value("kind", "");
    r.timestamp = j.value("timestamp", "");
    r.configHash = j.value("configHash", "");
    for (const auto& [k, t] : j.at("tables").items()) {
      Table tb;
      tb.columns = t.at("columns").get<std::vector<std::string>>();
      for (const auto& row : t.at("rows")) tb.add(row.get<std::vector<double>>());
      r.tables[k] = std::move(tb);
    }
    if (j.contains("scalars")) r.scalars = j.at("scalars").get<std::map<std::string, double>>();
    if (j.contains("verdicts")) r.verdicts = j.at("verdicts").get<std::map<std::string, bool>>();
    if (j.contains("notes")) r.notes = j.at("notes").get<std::vector<std::string>>();
    return r;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("record json: ") + e.what());
  }
}

inline ResultRecord load_record(const std::string& path) {
  std::ifstream in(path);
  mprecon::detail::require(in.good(), "cannot open record file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InvalidArgument(path + ": " + e.what());
  }
  return record_from_json(j);
}

// ---------------------------------------------------------------------------
// Atomic multi-file writes

// Collects files and commits them together: all are written to temporary
// names first; on any failure the temporaries are removed and no final file
// is touched.
class FileBatch {
 public:
  void add(std::filesystem::path path, std::string content) { files_.emplace_back(std::move(path), std::move(content)); }
  const std::vector<std::pair<std::filesystem::path, std::string>>& files() const { return files_; }

  std::vector<std::filesystem::path> commit() const {
    namespace fs = std::filesystem;
    std::vector<fs::path> staged;
    auto cleanup = [&] {
      std::error_code ec;
      for (const auto& p : staged) fs::remove(p, ec);
    };
    try {
      for (const auto& [path, content] : files_) {
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        fs::path tmp = path;
        tmp += ".tmp";
        staged.push_back(tmp);
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write '" + tmp.string() + "'");
        out << content;
        out.close();
        if (!out) throw Error("write failed for '" + tmp.string() + "'");
      }
    } catch (...) {
      cleanup();
      throw;
    }
    std::vector<fs::path> done;
    for (std::size_t i = 0; i < files_.size(); ++i) {
      fs::rename(staged[i], files_[i].first);
      done.push_back(files_[i].first);
    }
    return done;
  }

 private:
  std::vector<std::pair<std::filesystem::path, std::string>> files_;
};

enum class OutputFormat { Json, Csv, Both };

inline OutputFormat output_format_from_string(const std::string& s) {
  if (s == "json") return OutputFormat::Json;
  if (s == "csv") return OutputFormat::Csv;
  if (s == "both") return OutputFormat::Both;
  throw InvalidArgument("unknown output format '" + s + "' (json, csv or both)");
}

// Adds the record's files under dir: record.json, <table>.csv, scalars.csv, verdicts.csv.
inline void add_record_files(FileBatch& batch, const ResultRecord& r, const std::filesystem::path& dir,
                             OutputFormat fmt = OutputFormat::Both) {
  if (fmt != OutputFormat::Csv) batch.add(dir / "record.json", to_json(r).dump(2) + "\n");
  if (fmt != OutputFormat::Json) {
    for (const auto& [name, t] : r.tables) batch.add(dir / (name + ".csv"), table_to_csv(t));
    batch.add(dir / "scalars.csv", scalars_to_csv(r));
    batch.add(dir / "verdicts.csv", verdicts_to_csv(r));
  }
}

}  // namespace mprecon::experiments
