#include "amf/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace amf {

namespace {

constexpr const char* kVersionLine = "amf-checkpoint v1 float64-le";

std::string shape_field(const Shape& s) {
    if (s.empty()) return "scalar";
    std::string out;
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out;
}

Shape parse_shape_field(const std::string& f) {
    if (f == "scalar") return {};
    Shape s;
    std::stringstream ss(f);
    std::string part;
    while (std::getline(ss, part, 'x')) s.push_back(std::stoll(part));
    return s;
}

}  // namespace

void save_arrays(const std::string& stem,
                 const std::vector<std::pair<std::string, Tensor>>& arrays) {
    std::ofstream manifest(stem + ".manifest");
    std::ofstream blob(stem + ".blob", std::ios::binary);
    if (!manifest || !blob) throw IoError("save_arrays: cannot open '" + stem + "' for writing");
    manifest << kVersionLine << "\n";
    uint64_t offset = 0;
    for (const auto& [name, t] : arrays) {
        if (name.find_first_of(" \t\n") != std::string::npos) {
            throw IoError("save_arrays: array name '" + name + "' contains whitespace");
        }
        manifest << name << "\t" << shape_field(t.shape()) << "\t" << offset << "\n";
        const auto& d = t.data();
        blob.write(reinterpret_cast<const char*>(d.data()),
                   static_cast<std::streamsize>(d.size() * sizeof(double)));
        offset += d.size() * sizeof(double);
    }
    if (!manifest || !blob) throw IoError("save_arrays: write failed for '" + stem + "'");
}

std::vector<std::pair<std::string, Tensor>> load_arrays(const std::string& stem) {
    std::ifstream manifest(stem + ".manifest");
    if (!manifest) throw IoError("load_arrays: cannot open '" + stem + ".manifest'");
    std::string line;
    if (!std::getline(manifest, line) || line != kVersionLine) {
        throw IoError("load_arrays: unsupported checkpoint version in '" + stem + ".manifest'");
    }
    std::ifstream blob(stem + ".blob", std::ios::binary);
    if (!blob) throw IoError("load_arrays: cannot open '" + stem + ".blob'");

    std::vector<std::pair<std::string, Tensor>> out;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string name, shape_f;
        uint64_t offset = 0;
        if (!(ls >> name >> shape_f >> offset)) {
            throw IoError("load_arrays: malformed manifest line: " + line);
        }
        Shape shape = parse_shape_field(shape_f);
        size_t count = static_cast<size_t>(shape_numel(shape));
        std::vector<double> data(count);
        blob.seekg(static_cast<std::streamoff>(offset));
        blob.read(reinterpret_cast<char*>(data.data()),
                  static_cast<std::streamsize>(count * sizeof(double)));
        if (static_cast<size_t>(blob.gcount()) != count * sizeof(double)) {
            throw IoError("load_arrays: blob truncated reading '" + name + "'");
        }
        out.emplace_back(name, Tensor::from_data(std::move(shape), std::move(data)));
    }
    return out;
}

void load_checkpoint(const std::string& stem, ParamList& params) {
    auto arrays = load_arrays(stem);
    std::map<std::string, Tensor> by_name;
    for (auto& [n, t] : arrays) by_name.emplace(n, t);
    for (auto& [name, t] : params.items) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw IoError("load_checkpoint: checkpoint '" + stem + "' is missing parameter '" + name + "'");
        }
        if (it->second.shape() != t.shape()) {
            throw ShapeError("load_checkpoint: shape mismatch for '" + name + "': checkpoint " +
                             shape_str(it->second.shape()) + " vs model " + shape_str(t.shape()));
        }
        t.raw_data() = it->second.data();
    }
}

}  // namespace amf
