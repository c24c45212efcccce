#pragma once

#include <string>

#include "curvlab/grid.hpp"

namespace curvlab {

// On-disk field: <base>.json manifest plus <base>.bin with little-endian
// float64 values, node-major and coefficient-minor.
struct FieldFile {
    GridPtr grid;
    std::string kind;  // "form", "map" or "metric"
    int degree = 0;    // form degree when kind == "form"
    int components = 0;
    std::vector<double> data;
};

void write_field_file(const std::string& basename, const FieldFile& f);
FieldFile read_field_file(const std::string& basename);

void save_form(const std::string& basename, const FormField& f);
FormField load_form(const std::string& basename);
void save_map(const std::string& basename, const MapField& m);
MapField load_map(const std::string& basename);

}  // namespace curvlab
