#include "parlm/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace parlm {

namespace {

constexpr char kMagic[8] = {'P', 'A', 'R', 'L', 'M', 'C', 'K', '1'};

void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
void put_f64(std::ostream& out, double v) { out.write(reinterpret_cast<const char*>(&v), 8); }

void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_mat(std::ostream& out, const Mat& m) {
  put_u64(out, static_cast<std::uint64_t>(m.rows()));
  put_u64(out, static_cast<std::uint64_t>(m.cols()));
  for (long i = 0; i < m.rows(); ++i)
    for (long j = 0; j < m.cols(); ++j) put_f64(out, m(i, j));
}

std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  if (!in) throw CheckpointError("truncated checkpoint");
  return v;
}

double get_f64(std::istream& in) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  if (!in) throw CheckpointError("truncated checkpoint");
  return v;
}

std::string get_string(std::istream& in) {
  std::uint64_t n = get_u64(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw CheckpointError("truncated checkpoint");
  return s;
}

Mat get_mat(std::istream& in) {
  std::uint64_t r = get_u64(in), c = get_u64(in);
  Mat m(static_cast<long>(r), static_cast<long>(c));
  for (std::uint64_t i = 0; i < r; ++i)
    for (std::uint64_t j = 0; j < c; ++j) m(static_cast<long>(i), static_cast<long>(j)) = get_f64(in);
  return m;
}

}  // namespace

Checkpoint Checkpoint::from_store(const ParamStore& store, const TrainConfig& cfg, long step,
                                  std::vector<MetricEvent> history,
                                  std::vector<std::pair<std::string, Mat>> aux) {
  Checkpoint ck;
  ck.config = cfg;
  ck.step = step;
  ck.history = std::move(history);
  ck.aux = std::move(aux);
  for (const Param* p : store.all()) ck.params.emplace_back(p->name, p->value);
  return ck;
}

void Checkpoint::apply_to(ParamStore& store) const {
  if (params.size() != store.all().size())
    throw CheckpointError("checkpoint parameter count does not match the model");
  for (const auto& [name, value] : params) {
    Param& p = store.get(name);
    if (p.rows() != value.rows() || p.cols() != value.cols())
      throw CheckpointError("parameter shape mismatch for " + name);
    p.value = value;
  }
}

const Mat* Checkpoint::find_aux(const std::string& name) const {
  for (const auto& [n, m] : aux)
    if (n == name) return &m;
  return nullptr;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint: " + path.string());
  out.write(kMagic, 8);
  put_u64(out, 1);  // version
  put_string(out, config.to_json());
  put_u64(out, static_cast<std::uint64_t>(step));
  put_u64(out, history.size());
  for (const auto& ev : history) {
    put_u64(out, static_cast<std::uint64_t>(ev.step));
    put_string(out, ev.key);
    put_f64(out, ev.value);
  }
  put_u64(out, params.size());
  for (const auto& [name, m] : params) {
    put_string(out, name);
    put_mat(out, m);
  }
  put_u64(out, aux.size());
  for (const auto& [name, m] : aux) {
    put_string(out, name);
    put_mat(out, m);
  }
  if (!out) throw CheckpointError("short write: " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw CheckpointError("not a checkpoint file: " + path.string());
  std::uint64_t version = get_u64(in);
  if (version != 1) throw CheckpointError("unsupported checkpoint version");
  Checkpoint ck;
  ck.config = TrainConfig::from_json(get_string(in));
  ck.step = static_cast<long>(get_u64(in));
  std::uint64_t nh = get_u64(in);
  for (std::uint64_t i = 0; i < nh; ++i) {
    MetricEvent ev;
    ev.step = static_cast<long>(get_u64(in));
    ev.key = get_string(in);
    ev.value = get_f64(in);
    ck.history.push_back(std::move(ev));
  }
  std::uint64_t np = get_u64(in);
  for (std::uint64_t i = 0; i < np; ++i) {
    std::string name = get_string(in);
    ck.params.emplace_back(std::move(name), get_mat(in));
  }
  std::uint64_t na = get_u64(in);
  for (std::uint64_t i = 0; i < na; ++i) {
    std::string name = get_string(in);
    ck.aux.emplace_back(std::move(name), get_mat(in));
  }
  return ck;
}

}  // namespace parlm
