#include "sgprompt/checkpoint.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "sgprompt/errors.hpp"

namespace sgprompt {
namespace {

constexpr const char* kMagic = "sgprompt-encoder v1";
constexpr const char* kNames[] = {"w1", "b1", "w2", "b2"};

std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

class Reader {
 public:
  explicit Reader(const std::string& text) : in_(text) {}

  std::string line() {
    std::string s;
    if (!std::getline(in_, s)) fail("unexpected end of checkpoint");
    ++number_;
    return s;
  }

  std::size_t keyed(const std::string& key) {
    std::istringstream ls(line());
    std::string k;
    long long v = -1;
    if (!(ls >> k >> v) || k != key || v < 0) fail("expected '" + key + " <n>'");
    return static_cast<std::size_t>(v);
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw IntegrityError("checkpoint line " + std::to_string(number_) + ": " + what);
  }

 private:
  std::istringstream in_;
  std::size_t number_ = 0;
};

}  // namespace

std::string serialize_encoder(const EncoderParams& p) {
  std::string out = std::string(kMagic) + "\n";
  out += "input_dim " + std::to_string(p.input_dim) + "\n";
  out += "hidden_dim " + std::to_string(p.hidden_dim) + "\n";
  out += "layers " + std::to_string(p.num_layers()) + "\n";
  const auto tensors = p.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const Tensor& t = *tensors[i];
    out += "tensor " + std::to_string(i / 4 + 1) + " " + kNames[i % 4] + " " +
           std::to_string(t.rows()) + " " + std::to_string(t.cols()) + "\n";
    for (std::size_t r = 0; r < t.rows(); ++r) {
      for (std::size_t c = 0; c < t.cols(); ++c) {
        if (c) out += ' ';
        out += hex(t(r, c));
      }
      out += '\n';
    }
  }
  out += "end\n";
  return out;
}

EncoderParams deserialize_encoder(const std::string& text) {
  Reader rd(text);
  if (rd.line() != kMagic) rd.fail(std::string("expected header '") + kMagic + "'");
  EncoderParams p;
  p.input_dim = rd.keyed("input_dim");
  p.hidden_dim = rd.keyed("hidden_dim");
  const std::size_t layers = rd.keyed("layers");
  if (p.input_dim == 0 || p.hidden_dim == 0 || layers == 0) rd.fail("zero dimension");
  p.layers.resize(layers);
  const auto tensors = p.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const std::size_t layer = i / 4;
    const std::size_t in = layer == 0 ? p.input_dim : p.hidden_dim;
    const bool bias = i % 2 == 1;
    const std::size_t rows = bias ? 1 : (i % 4 == 0 ? in : p.hidden_dim);
    const std::size_t cols = p.hidden_dim;

    std::istringstream hs(rd.line());
    std::string tag, name;
    std::size_t l = 0, r = 0, c = 0;
    if (!(hs >> tag >> l >> name >> r >> c) || tag != "tensor" || l != layer + 1 ||
        name != kNames[i % 4] || r != rows || c != cols) {
      rd.fail("expected 'tensor " + std::to_string(layer + 1) + " " + kNames[i % 4] + " " +
              std::to_string(rows) + " " + std::to_string(cols) + "'");
    }
    Tensor t(rows, cols);
    for (std::size_t row = 0; row < rows; ++row) {
      const std::string s = rd.line();
      const char* cur = s.c_str();
      for (std::size_t col = 0; col < cols; ++col) {
        char* end = nullptr;
        errno = 0;
        const double v = std::strtod(cur, &end);
        if (end == cur || errno == ERANGE || !std::isfinite(v)) rd.fail("bad value");
        t(row, col) = v;
        cur = end;
      }
      while (*cur == ' ') ++cur;
      if (*cur != '\0') rd.fail("trailing data");
    }
    *tensors[i] = std::move(t);
  }
  if (rd.line() != "end") rd.fail("expected 'end'");
  return p;
}

void save_encoder(const std::filesystem::path& path, const EncoderParams& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot write checkpoint " + path.string());
  out << serialize_encoder(p);
  if (!out) throw IngestError("failed writing checkpoint " + path.string());
}

EncoderParams load_encoder(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("missing checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_encoder(buf.str());
}

}  // namespace sgprompt
