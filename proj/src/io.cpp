#include "koopgen/io.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include <zlib.h>
#include <json.hpp>

namespace koopgen {

using nlohmann::json;

namespace {

bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string gzip_compress(const std::string& data) {
  z_stream zs{};
  if (deflateInit2(&zs, Z_BEST_COMPRESSION, Z_DEFLATED, 15 + 16, 8,
                   Z_DEFAULT_STRATEGY) != Z_OK)
    throw std::runtime_error("gzip: deflateInit failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(data.data()));
  zs.avail_in = static_cast<uInt>(data.size());
  std::string out;
  char buf[1 << 15];
  int ret;
  do {
    zs.next_out = reinterpret_cast<Bytef*>(buf);
    zs.avail_out = sizeof(buf);
    ret = deflate(&zs, Z_FINISH);
    out.append(buf, sizeof(buf) - zs.avail_out);
  } while (ret == Z_OK);
  deflateEnd(&zs);
  if (ret != Z_STREAM_END) throw std::runtime_error("gzip: deflate failed");
  return out;
}

std::string gzip_decompress(const std::string& data) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 16) != Z_OK)
    throw std::runtime_error("gzip: inflateInit failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(data.data()));
  zs.avail_in = static_cast<uInt>(data.size());
  std::string out;
  char buf[1 << 15];
  int ret;
  do {
    zs.next_out = reinterpret_cast<Bytef*>(buf);
    zs.avail_out = sizeof(buf);
    ret = inflate(&zs, Z_NO_FLUSH);
    if (ret != Z_OK && ret != Z_STREAM_END) {
      inflateEnd(&zs);
      throw std::runtime_error("gzip: inflate failed");
    }
    out.append(buf, sizeof(buf) - zs.avail_out);
  } while (ret != Z_STREAM_END);
  inflateEnd(&zs);
  return out;
}

json matrix_to_rows(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd rows_to_matrix(const json& rows, Eigen::Index nrows,
                               Eigen::Index ncols, const std::string& path) {
  if (!rows.is_array() || static_cast<Eigen::Index>(rows.size()) != nrows)
    throw std::invalid_argument(path + ": expected " + std::to_string(nrows) + " rows");
  Eigen::MatrixXd m(nrows, ncols);
  for (Eigen::Index i = 0; i < nrows; ++i) {
    const json& row = rows[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != ncols)
      throw std::invalid_argument(path + "[" + std::to_string(i) + "]: expected " +
                                  std::to_string(ncols) + " entries");
    for (Eigen::Index j = 0; j < ncols; ++j)
      m(i, j) = row[static_cast<std::size_t>(j)].get<double>();
  }
  return m;
}

Eigen::VectorXd array_to_vector(const json& arr, Eigen::Index size,
                                const std::string& path) {
  if (!arr.is_array() || static_cast<Eigen::Index>(arr.size()) != size)
    throw std::invalid_argument(path + ": expected " + std::to_string(size) +
                                " entries");
  Eigen::VectorXd v(size);
  for (Eigen::Index i = 0; i < size; ++i) v(i) = arr[static_cast<std::size_t>(i)].get<double>();
  return v;
}

json vector_to_array(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

int get_int(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number_integer())
    throw std::invalid_argument(std::string(key) + ": missing or not an integer");
  return j[key].get<int>();
}

double get_double(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number())
    throw std::invalid_argument(std::string(key) + ": missing or not a number");
  return j[key].get<double>();
}

}  // namespace

std::string dataset_to_json(const Dataset& dataset) {
  json j;
  j["dt"] = dataset.dt;
  j["p"] = dataset.p;
  j["q"] = dataset.q;
  json trajs = json::array();
  for (const auto& t : dataset.trajectories) {
    json traj;
    // Row l of "inputs"/"outputs" is time step l.
    traj["inputs"] = matrix_to_rows(t.inputs.transpose());
    traj["outputs"] = matrix_to_rows(t.outputs.transpose());
    trajs.push_back(std::move(traj));
  }
  j["trajectories"] = std::move(trajs);
  return j.dump();
}

Dataset dataset_from_json(const std::string& text) {
  json j = json::parse(text);
  Dataset d;
  d.dt = get_double(j, "dt");
  d.p = get_int(j, "p");
  d.q = get_int(j, "q");
  if (!j.contains("trajectories") || !j["trajectories"].is_array())
    throw std::invalid_argument("trajectories: missing or not an array");
  int idx = 0;
  for (const auto& traj : j["trajectories"]) {
    const std::string path = "trajectories[" + std::to_string(idx) + "]";
    if (!traj.contains("inputs") || !traj.contains("outputs"))
      throw std::invalid_argument(path + ": missing inputs/outputs");
    const auto& in = traj["inputs"];
    const auto& out = traj["outputs"];
    if (!in.is_array() || !out.is_array())
      throw std::invalid_argument(path + ": inputs/outputs must be arrays");
    if (out.size() != in.size() + 1)
      throw std::invalid_argument(path + ".outputs: length must equal inputs length + 1");
    Trajectory t;
    t.inputs = rows_to_matrix(in, static_cast<Eigen::Index>(in.size()), d.q,
                              path + ".inputs")
                   .transpose();
    t.outputs = rows_to_matrix(out, static_cast<Eigen::Index>(out.size()), d.p,
                               path + ".outputs")
                    .transpose();
    d.trajectories.push_back(std::move(t));
    ++idx;
  }
  d.validate();
  return d;
}

std::string model_to_json(const ModelParams& params) {
  json j;
  j["dt"] = params.dt;
  j["n"] = params.n;
  j["q"] = params.q;
  j["p"] = params.p;
  json gens = json::array();
  for (const auto& g : params.gen) gens.push_back(matrix_to_rows(g));
  j["gen"] = std::move(gens);
  j["c0"] = vector_to_array(params.c0);
  j["sigma_w"] = matrix_to_rows(params.sigma_w);
  j["sigma_v"] = matrix_to_rows(params.sigma_v);
  j["mu0"] = vector_to_array(params.mu0);
  j["sigma0"] = matrix_to_rows(params.sigma0);
  j["kron_order"] = "input-major";
  return j.dump();
}

ModelParams model_from_json(const std::string& text) {
  json j = json::parse(text);
  ModelParams m;
  m.dt = get_double(j, "dt");
  m.n = get_int(j, "n");
  m.q = get_int(j, "q");
  m.p = get_int(j, "p");
  if (j.contains("kron_order") && j["kron_order"].get<std::string>() != "input-major")
    throw std::invalid_argument("kron_order: unsupported block ordering");
  if (!j.contains("gen") || !j["gen"].is_array() ||
      static_cast<int>(j["gen"].size()) != m.q + 1)
    throw std::invalid_argument("gen: expected q+1 matrices");
  for (int k = 0; k <= m.q; ++k)
    m.gen.push_back(rows_to_matrix(j["gen"][static_cast<std::size_t>(k)], m.n + 1,
                                   m.n, "gen[" + std::to_string(k) + "]"));
  m.c0 = array_to_vector(j["c0"], m.p, "c0");
  m.sigma_w = rows_to_matrix(j["sigma_w"], m.n, m.n, "sigma_w");
  m.sigma_v = rows_to_matrix(j["sigma_v"], m.p, m.p, "sigma_v");
  m.mu0 = array_to_vector(j["mu0"], m.n, "mu0");
  m.sigma0 = rows_to_matrix(j["sigma0"], m.n, m.n, "sigma0");
  return m;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  if (has_suffix(path, ".gz")) {
    const std::string gz = gzip_compress(content);
    os.write(gz.data(), static_cast<std::streamsize>(gz.size()));
  } else {
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  if (has_suffix(path, ".gz")) return gzip_decompress(buf.str());
  return buf.str();
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  write_file(path, dataset_to_json(dataset));
}

Dataset load_dataset(const std::string& path) {
  return dataset_from_json(read_file(path));
}

void save_model(const ModelParams& params, const std::string& path) {
  write_file(path, model_to_json(params));
}

ModelParams load_model(const std::string& path) {
  return model_from_json(read_file(path));
}

std::string matrix_to_csv(const std::string& header, const Eigen::MatrixXd& rows) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << header << '\n';
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < rows.cols(); ++j) {
      if (j > 0) os << ',';
      os << rows(i, j);
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace koopgen
