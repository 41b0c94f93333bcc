#include "sevuln/report.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sevuln/errors.hpp"

namespace sevuln {

namespace fs = std::filesystem;

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string RunManifest::id() const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["case_hash"] = case_hash;
  j["meas_hash"] = meas_hash;
  j["params"] = params;
  j["version"] = std::string(kVersion);
  return hex64(fnv1a64(j.dump()));
}

nlohmann::ordered_json RunManifest::to_json(
    const std::map<std::string, std::string>& outputs) const {
  nlohmann::ordered_json j;
  j["manifest_id"] = id();
  j["tool"] = "sevuln";
  j["version"] = std::string(kVersion);
  j["command"] = command;
  j["case"] = {{"path", case_path}, {"fnv1a64", case_hash}};
  j["measurements"] = {{"path", meas_path}, {"fnv1a64", meas_hash}};
  j["params"] = params;
  j["timestamp"] = timestamp;
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (const auto& [path, hash] : outputs) out[path] = hash;
  j["outputs"] = out;
  return j;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string scores_csv(const ScoreTable& table, const std::string& manifest_id) {
  std::string out = "# manifest " + manifest_id + "\n";
  out += table.input == StealthInput::kSurrogate ? "# stealth input: surrogate\n"
                                                 : "# stealth input: residual\n";
  out += "measurement_id,kind,location,raw_dJdz,raw_colnorm,s_score,l_score,v_score,rank\n";
  for (const ScoreRow& r : table.rows) {
    out += r.id + "," + r.kind + "," + r.location + "," + format_double(r.raw_djdz) + "," +
           format_double(r.raw_colnorm) + "," + format_double(r.s_score) + "," +
           format_double(r.l_score) + "," + format_double(r.v_score) + "," +
           std::to_string(r.rank) + "\n";
  }
  return out;
}

nlohmann::ordered_json scores_json(const ScoreTable& table) {
  nlohmann::ordered_json j;
  j["stealth_input"] = table.input == StealthInput::kSurrogate ? "surrogate" : "residual";
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const ScoreRow& r : table.rows) {
    rows.push_back({{"measurement_id", r.id},
                    {"kind", r.kind},
                    {"location", r.location},
                    {"raw_dJdz", r.raw_djdz},
                    {"raw_colnorm", r.raw_colnorm},
                    {"s_score", r.s_score},
                    {"l_score", r.l_score},
                    {"v_score", r.v_score},
                    {"rank", r.rank}});
  }
  j["rows"] = rows;
  return j;
}

std::string matrix_csv(const Eigen::MatrixXd& m, const std::vector<std::string>& row_names,
                       const std::vector<std::string>& col_names, const std::string& manifest_id) {
  if (static_cast<std::size_t>(m.rows()) != row_names.size() ||
      static_cast<std::size_t>(m.cols()) != col_names.size()) {
    throw ShapeError("matrix labels do not match its shape");
  }
  std::string out = "# manifest " + manifest_id + "\nrow";
  for (const auto& c : col_names) out += "," + c;
  out += "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out += row_names[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < m.cols(); ++j) out += "," + format_double(m(i, j));
    out += "\n";
  }
  return out;
}

std::string svd_csv(const SvdReport& report, const std::string& manifest_id) {
  std::string out = "# manifest " + manifest_id + "\n";
  out += report.squared ? "# energy: squared singular values\n" : "# energy: singular values\n";
  out += "r,sigma_x,ce_x,sigma_j,ce_j\n";
  const Eigen::Index rows = std::max(report.sigma_x.size(), report.sigma_j.size());
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto cell = [&](const Eigen::VectorXd& v) {
      return i < v.size() ? format_double(v(i)) : std::string();
    };
    out += std::to_string(i + 1) + "," + cell(report.sigma_x) + "," + cell(report.ce_x) + "," +
           cell(report.sigma_j) + "," + cell(report.ce_j) + "\n";
  }
  return out;
}

nlohmann::ordered_json verdict_json(const InvarianceVerdict& v, const SvdReport& report,
                                    std::size_t r_j) {
  nlohmann::ordered_json j;
  j["verdict"] = v.invariant ? "invariant" : "not-invariant";
  j["r_x"] = v.r;
  j["r_j"] = r_j;
  j["energy_threshold"] = v.threshold;
  j["energy"] = report.squared ? "squared" : "first-power";
  j["ce_x"] = v.ce_x;
  j["ce_j"] = v.ce_j;
  j["invariant_x"] = v.invariant_x;
  j["invariant_j"] = v.invariant_j;
  j["note"] =
      "invariant means the leading singular values capture at least the threshold of the "
      "centred sensitivity variation across operating conditions";
  return j;
}

void OutputBundle::add(const std::string& relative_path, std::string content) {
  files_[relative_path] = std::move(content);
}

std::map<std::string, std::string> OutputBundle::write(const std::string& dir) const {
  std::map<std::string, std::string> hashes;
  for (const auto& [rel, content] : files_) {
    const fs::path path = fs::path(dir) / rel;
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << content;
    hashes[rel] = hex64(fnv1a64(content));
  }
  return hashes;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'V', 'C', '1'};

template <class T>
void put_pod(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_str(std::string& out, const std::string& s) {
  put_pod(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& data) : data_(data) {}
  template <class T>
  T pod() {
    if (pos_ + sizeof(T) > data_.size()) throw ParseError("truncated cache file");
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    if (pos_ + n > data_.size()) throw ParseError("truncated cache file");
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  const std::string& data_;
  std::size_t pos_ = 0;
};

}  // namespace

SensitivityCache::SensitivityCache(std::string dir, std::string case_hash,
                                   std::string config_hash, std::string params_hash)
    : dir_(std::move(dir)), prefix_(case_hash + ":" + config_hash + ":" + params_hash) {}

std::string SensitivityCache::path_for(double factor, std::uint64_t seed) const {
  const std::string key = prefix_ + ":" + format_double(factor) + ":" + std::to_string(seed);
  return (fs::path(dir_) / (hex64(fnv1a64(key)) + ".bin")).string();
}

std::optional<ConditionSensitivities> SensitivityCache::get(double factor,
                                                            std::uint64_t seed) const {
  const std::string path = path_for(factor, seed);
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string data = ss.str();
  try {
    Reader rd(data);
    for (char c : kMagic) {
      if (rd.pod<char>() != c) return std::nullopt;
    }
    ConditionSensitivities v;
    const auto n = static_cast<Eigen::Index>(rd.pod<std::uint64_t>());
    const auto p = static_cast<Eigen::Index>(rd.pod<std::uint64_t>());
    v.dx_dz.resize(n, p);
    for (Eigen::Index k = 0; k < n * p; ++k) v.dx_dz.data()[k] = rd.pod<double>();
    v.dj_dz.resize(p);
    for (Eigen::Index k = 0; k < p; ++k) v.dj_dz(k) = rd.pod<double>();
    v.j_star = rd.pod<double>();
    v.table.input = rd.pod<std::uint8_t>() ? StealthInput::kSurrogate : StealthInput::kResidual;
    const auto rows = rd.pod<std::uint64_t>();
    for (std::uint64_t k = 0; k < rows; ++k) {
      ScoreRow r;
      r.index = rd.pod<std::uint64_t>();
      r.id = rd.str();
      r.kind = rd.str();
      r.location = rd.str();
      r.raw_djdz = rd.pod<double>();
      r.raw_colnorm = rd.pod<double>();
      r.s_score = rd.pod<double>();
      r.l_score = rd.pod<double>();
      r.v_score = rd.pod<double>();
      r.rank = rd.pod<std::int32_t>();
      v.table.rows.push_back(std::move(r));
    }
    if (!rd.done()) return std::nullopt;
    return v;
  } catch (const ParseError&) {
    return std::nullopt;
  }
}

void SensitivityCache::put(double factor, std::uint64_t seed,
                           const ConditionSensitivities& v) const {
  std::string out(kMagic, sizeof kMagic);
  put_pod(out, static_cast<std::uint64_t>(v.dx_dz.rows()));
  put_pod(out, static_cast<std::uint64_t>(v.dx_dz.cols()));
  for (Eigen::Index k = 0; k < v.dx_dz.size(); ++k) put_pod(out, v.dx_dz.data()[k]);
  for (Eigen::Index k = 0; k < v.dj_dz.size(); ++k) put_pod(out, v.dj_dz(k));
  put_pod(out, v.j_star);
  put_pod(out, static_cast<std::uint8_t>(v.table.input == StealthInput::kSurrogate));
  put_pod(out, static_cast<std::uint64_t>(v.table.rows.size()));
  for (const ScoreRow& r : v.table.rows) {
    put_pod(out, static_cast<std::uint64_t>(r.index));
    put_str(out, r.id);
    put_str(out, r.kind);
    put_str(out, r.location);
    put_pod(out, r.raw_djdz);
    put_pod(out, r.raw_colnorm);
    put_pod(out, r.s_score);
    put_pod(out, r.l_score);
    put_pod(out, r.v_score);
    put_pod(out, static_cast<std::int32_t>(r.rank));
  }
  fs::create_directories(dir_);
  const std::string path = path_for(factor, seed);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw ValidationError("cannot write cache file " + tmp);
    f << out;
  }
  fs::rename(tmp, path);
}

}  // namespace sevuln
