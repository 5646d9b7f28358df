#pragma once

// On-disk formats.
//
// Dataset (binary, little-endian): "NCDS", u32 n, u32 m, u32 K, n*m f32
// features row-major, n u32 labels.
// Model, calibrator, clamp parameters and metric reports are JSON with
// shortest round-trip float formatting.

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"

#include "nclamp/calibrators.hpp"
#include "nclamp/clamping.hpp"
#include "nclamp/metrics.hpp"
#include "nclamp/network.hpp"

namespace nclamp {

using Json = nlohmann::ordered_json;

struct Dataset {
    Batch batch;
    std::size_t class_count = 0;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Features must be exactly representable as f32; anything else throws SchemaError.
std::string encode_dataset(const Dataset& data);
Dataset decode_dataset(std::string_view bytes);

Json network_to_json(const Network& net);
Network network_from_json(const Json& doc);

Json calibrator_to_json(const LinearCalib& calib);
LinearCalib calibrator_from_json(const Json& doc);

Json clamp_params_to_json(const ClampParams& params);
ClampParams clamp_params_from_json(const Json& doc);

Json metric_report_to_json(const MetricReport& report);
MetricReport metric_report_from_json(const Json& doc);

// Whole-file helpers. Read failures and malformed JSON throw ParseError.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);
Json parse_json(std::string_view text, const std::string& what);
std::string dump_json(const Json& doc);  // two-space indent, trailing newline

Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const std::filesystem::path& path, const Dataset& data);
Network load_network(const std::filesystem::path& path);
void save_network(const std::filesystem::path& path, const Network& net);

}  // namespace nclamp
