#include "pursuit/autodiff/checkpoint.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pursuit::ad {
namespace {

constexpr const char* kFormat = "pursuit-params";
constexpr int kVersion = 1;

void write_double(std::ostringstream& out, double v) {
  if (!std::isfinite(v)) throw std::domain_error("checkpoint: refusing to write a non-finite value");
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out << buf;
}

}  // namespace

std::string serialize_params(const ParamStore& store, const nlohmann::json& meta) {
  std::ostringstream out;
  out << "{\n  \"format\": \"" << kFormat << "\",\n  \"version\": " << kVersion
      << ",\n  \"step\": " << store.step() << ",\n  \"meta\": " << meta.dump() << ",\n  \"params\": [";
  bool first = true;
  for (const auto& [name, entry] : store.entries()) {
    out << (first ? "\n" : ",\n") << "    {\"name\": " << nlohmann::json(name).dump() << ", \"shape\": [";
    first = false;
    const Shape& shape = entry.value.shape();
    for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? ", " : "") << shape[i];
    out << "], \"values\": [";
    const auto v = entry.value.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) out << ", ";
      write_double(out, v[i]);
    }
    out << "]}";
  }
  out << "\n  ]\n}\n";
  return out.str();
}

ParamStore deserialize_params(const std::string& text, nlohmann::json* meta) {
  const nlohmann::json doc = nlohmann::json::parse(text);
  if (doc.value("format", std::string()) != kFormat)
    throw std::runtime_error("checkpoint: unrecognised format tag");
  if (doc.value("version", 0) != kVersion) throw std::runtime_error("checkpoint: unsupported version");
  ParamStore store;
  for (const auto& item : doc.at("params")) {
    const auto name = item.at("name").get<std::string>();
    Shape shape = item.at("shape").get<Shape>();
    std::vector<double> values = item.at("values").get<std::vector<double>>();
    if (numel(shape) != values.size())
      throw std::runtime_error("checkpoint: parameter " + name + " has shape " + to_string(shape) + " but " +
                               std::to_string(values.size()) + " values");
    store.add(name, std::move(shape), std::move(values));
  }
  store.set_step(doc.value("step", std::uint64_t{0}));
  if (meta != nullptr) *meta = doc.value("meta", nlohmann::json::object());
  return store;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store, const nlohmann::json& meta) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path.string());
  out << serialize_params(store, meta);
}

ParamStore load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint: cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_params(buf.str(), meta);
}

}  // namespace pursuit::ad
