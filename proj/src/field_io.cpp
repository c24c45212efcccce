#include "curvlab/field_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace curvlab {

using nlohmann::json;

namespace {

void to_little_endian(std::vector<double>& v) {
    if constexpr (std::endian::native == std::endian::big) {
        for (auto& x : v) {
            unsigned char b[8];
            std::memcpy(b, &x, 8);
            for (int i = 0; i < 4; ++i) std::swap(b[i], b[7 - i]);
            std::memcpy(&x, b, 8);
        }
    }
}

}  // namespace

void write_field_file(const std::string& basename, const FieldFile& f) {
    const auto& g = *f.grid;
    json manifest;
    manifest["dim"] = g.dim();
    manifest["shape"] = g.shape();
    manifest["spacing"] = g.spacing();
    manifest["origin"] = g.origin();
    if (f.kind == "form")
        manifest["degree"] = f.degree;
    else
        manifest["degree"] = f.kind;
    manifest["target_dim"] = f.components;
    std::ofstream mj(basename + ".json");
    if (!mj) throw Error("cannot write " + basename + ".json");
    mj << manifest.dump(2) << "\n";
    std::vector<double> data = f.data;
    to_little_endian(data);
    std::ofstream bin(basename + ".bin", std::ios::binary);
    if (!bin) throw Error("cannot write " + basename + ".bin");
    bin.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * 8));
}

FieldFile read_field_file(const std::string& basename) {
    std::ifstream mj(basename + ".json");
    if (!mj) throw Error("cannot read " + basename + ".json");
    json manifest;
    try {
        manifest = json::parse(mj);
    } catch (const json::exception& e) {
        throw Error(basename + ".json: " + e.what());
    }
    FieldFile f;
    try {
        auto shape = manifest.at("shape").get<std::vector<int>>();
        auto origin = manifest.at("origin").get<std::vector<double>>();
        if (manifest.at("dim").get<int>() != static_cast<int>(shape.size()))
            throw Error(basename + ".json: dim disagrees with shape");
        f.grid = make_grid(shape, manifest.at("spacing").get<double>(), origin);
        const auto& deg = manifest.at("degree");
        if (deg.is_number_integer()) {
            f.kind = "form";
            f.degree = deg.get<int>();
        } else {
            f.kind = deg.get<std::string>();
            if (f.kind != "map" && f.kind != "metric") throw Error(basename + ".json: unknown degree tag " + f.kind);
        }
        f.components = manifest.at("target_dim").get<int>();
    } catch (const json::exception& e) {
        throw Error(basename + ".json: " + e.what());
    }
    const std::size_t count = f.grid->node_count() * static_cast<std::size_t>(f.components);
    f.data.resize(count);
    std::ifstream bin(basename + ".bin", std::ios::binary);
    if (!bin) throw Error("cannot read " + basename + ".bin");
    bin.read(reinterpret_cast<char*>(f.data.data()), static_cast<std::streamsize>(count * 8));
    if (bin.gcount() != static_cast<std::streamsize>(count * 8)) throw Error(basename + ".bin: truncated");
    to_little_endian(f.data);
    return f;
}

void save_form(const std::string& basename, const FormField& f) {
    write_field_file(basename, {f.grid, "form", f.degree, f.ncoef(), f.coeffs});
}

FormField load_form(const std::string& basename) {
    auto ff = read_field_file(basename);
    if (ff.kind != "form") throw Error(basename + ": not a form field");
    FormField f;
    f.grid = ff.grid;
    f.degree = ff.degree;
    if (f.ncoef() != ff.components) throw Error(basename + ": coefficient count mismatch");
    f.coeffs = std::move(ff.data);
    return f;
}

void save_map(const std::string& basename, const MapField& m) {
    write_field_file(basename, {m.grid, "map", 0, m.target_dim, m.values});
}

MapField load_map(const std::string& basename) {
    auto ff = read_field_file(basename);
    if (ff.kind != "map") throw Error(basename + ": not a map field");
    MapField m;
    m.grid = ff.grid;
    m.target_dim = ff.components;
    m.values = std::move(ff.data);
    return m;
}

}  // namespace curvlab
