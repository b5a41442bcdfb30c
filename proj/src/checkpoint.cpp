#include "afrpn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

namespace afrpn {

using nlohmann::json;

namespace {

void write_blob(std::ofstream& out, const Tensor& t) {
  // Raw doubles; the build targets little-endian hosts.
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<Parameter*>& params,
                     bool include_momentum) {
  json entries = json::array();
  for (const Parameter* p : params) {
    entries.push_back({{"name", p->name}, {"shape", p->value.shape}, {"dtype", "f64"}});
  }
  if (include_momentum) {
    for (const Parameter* p : params) {
      entries.push_back(
          {{"name", p->name + ".momentum"}, {"shape", p->value.shape}, {"dtype", "f64"}});
    }
  }
  json manifest = {{"version", "DTF1"}, {"entries", entries}};

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_checkpoint: cannot open " + path);
  out << manifest.dump() << "\n";
  for (const Parameter* p : params) write_blob(out, p->value);
  if (include_momentum)
    for (const Parameter* p : params) write_blob(out, p->momentum);
  if (!out) throw IoError("save_checkpoint: write failed for " + path);
}

void load_checkpoint(const std::string& path,
                     const std::vector<Parameter*>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("load_checkpoint: missing manifest");
  json manifest;
  try {
    manifest = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(std::string("load_checkpoint: bad manifest: ") + e.what());
  }
  if (manifest.value("version", "") != std::string("DTF1"))
    throw CompatError("load_checkpoint: unsupported version tag");

  std::map<std::string, Parameter*> by_name;
  for (Parameter* p : params) by_name[p->name] = p;

  size_t value_entries = 0;
  for (const json& entry : manifest.at("entries")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    if (entry.value("dtype", "f64") != std::string("f64"))
      throw CompatError("load_checkpoint: unsupported dtype for " + name);

    const bool is_momentum = name.size() > 9 && name.ends_with(".momentum");
    const std::string base = is_momentum ? name.substr(0, name.size() - 9) : name;
    auto it = by_name.find(base);
    if (it == by_name.end())
      throw CompatError("load_checkpoint: unknown parameter " + name);
    Tensor& dst = is_momentum ? it->second->momentum : it->second->value;
    if (dst.shape != shape)
      throw CompatError("load_checkpoint: shape mismatch for " + name + ": file " +
                        shape_str(shape) + " vs model " + shape_str(dst.shape));
    in.read(reinterpret_cast<char*>(dst.data.data()),
            static_cast<std::streamsize>(dst.data.size() * sizeof(double)));
    if (!in) throw FormatError("load_checkpoint: truncated blob at " + name);
    if (!is_momentum) ++value_entries;
  }
  if (value_entries != params.size())
    throw CompatError("load_checkpoint: checkpoint is missing parameters");
}

}  // namespace afrpn
