#include "mfdelay/checkpoint.hpp"

#include <cstdio>
#include <istream>
#include <ostream>
#include <vector>

#include "mfdelay/errors.hpp"

namespace mfd {

void save_checkpoint(std::ostream& out, const ParameterList& params) {
  out << kCheckpointMagic << " v" << kCheckpointVersion << '\n' << params.size() << '\n';
  char buf[40];
  for (const auto& p : params) {
    const Tensor& t = p.var.value();
    out << p.name << ' ' << t.rank();
    for (std::size_t d : t.shape()) out << ' ' << d;
    out << '\n';
    for (std::size_t k = 0; k < t.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", t[k]);
      out << (k ? " " : "") << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing checkpoint");
}

void load_checkpoint(std::istream& in, ParameterList& params) {
  std::string magic, version;
  std::size_t count = 0;
  if (!(in >> magic >> version) || magic != kCheckpointMagic) {
    throw IoError("not a checkpoint file");
  }
  if (version != "v" + std::to_string(kCheckpointVersion)) {
    throw IoError("unsupported checkpoint version " + version);
  }
  if (!(in >> count) || count != params.size()) {
    throw IoError("checkpoint holds " + std::to_string(count) + " tensors, expected " +
                  std::to_string(params.size()));
  }
  // Staged so a bad file leaves the parameters untouched.
  std::vector<Buffer> staged;
  staged.reserve(params.size());
  for (const auto& p : params) {
    std::string name;
    std::size_t rank = 0;
    if (!(in >> name >> rank) || name != p.name) {
      throw IoError("checkpoint tensor '" + name + "' where '" + p.name + "' was expected");
    }
    Shape shape(rank);
    for (auto& d : shape) in >> d;
    if (!in || shape != p.var.shape()) {
      throw IoError("shape mismatch for " + p.name + ": file has " + shape_string(shape));
    }
    Buffer values(p.var.value().size());
    for (double& v : values) {
      if (!(in >> v)) throw IoError("truncated values for " + p.name);
    }
    staged.push_back(std::move(values));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    params[k].var.mutable_value().storage() = std::move(staged[k]);
  }
}

}  // namespace mfd
