#include "nclamp/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "nclamp/errors.hpp"

namespace nclamp {

namespace {

constexpr char kMagic[4] = {'N', 'C', 'D', 'S'};
constexpr std::size_t kHeaderBytes = 16;

void put_u32(std::string& out, std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out.push_back(static_cast<char>((v >> s) & 0xffu));
}

std::uint32_t get_u32(std::string_view in, std::size_t offset) {
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + b])) << (8 * b);
    return v;
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
    if (v > UINT32_MAX) throw SchemaError(std::string("dataset: ") + what + " exceeds u32");
    return static_cast<std::uint32_t>(v);
}

template <class T>
T get_field(const Json& doc, const char* key, const std::string& where) {
    if (!doc.is_object()) throw SchemaError(where + ": expected a JSON object");
    const auto it = doc.find(key);
    if (it == doc.end()) throw SchemaError(where + ": missing field '" + key + "'");
    try {
        return it->get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(where + ": field '" + key + "' has the wrong type (" + e.what() + ")");
    }
}

Json float_array(std::span<const double> v) {
    Json arr = Json::array();
    for (double x : v) arr.push_back(x);
    return arr;
}

}  // namespace

std::string encode_dataset(const Dataset& data) {
    const Batch& b = data.batch;
    std::string out(kMagic, 4);
    put_u32(out, checked_u32(b.size(), "n"));
    put_u32(out, checked_u32(b.features.cols(), "m"));
    put_u32(out, checked_u32(data.class_count, "K"));
    out.reserve(kHeaderBytes + 4 * b.features.size() + 4 * b.size());
    for (double x : b.features.values()) {
        const auto f = static_cast<float>(x);
        if (static_cast<double>(f) != x) throw SchemaError("dataset: feature value is not representable as f32");
        put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
    for (Label y : b.labels) {
        if (y >= data.class_count) throw SchemaError("dataset: label " + std::to_string(y) + " >= K");
        put_u32(out, y);
    }
    return out;
}

Dataset decode_dataset(std::string_view bytes) {
    if (bytes.size() < kHeaderBytes) {
        throw ParseError("dataset: truncated header, file ends at byte offset " + std::to_string(bytes.size()));
    }
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw ParseError("dataset: bad magic at byte offset 0");
    const std::size_t n = get_u32(bytes, 4);
    const std::size_t m = get_u32(bytes, 8);
    const std::size_t k = get_u32(bytes, 12);
    const std::size_t expected = kHeaderBytes + 4 * n * m + 4 * n;
    if (bytes.size() < expected) {
        throw ParseError("dataset: truncated, file ends at byte offset " + std::to_string(bytes.size()) +
                         " but header requires " + std::to_string(expected) + " bytes");
    }
    if (bytes.size() > expected) {
        throw ParseError("dataset: trailing data after byte offset " + std::to_string(expected));
    }
    if (n == 0 || m == 0) throw SchemaError("dataset: n and m must be positive");
    if (k < 2) throw SchemaError("dataset: K must be >= 2");

    std::vector<double> features(n * m);
    std::size_t offset = kHeaderBytes;
    for (auto& x : features) {
        x = static_cast<double>(std::bit_cast<float>(get_u32(bytes, offset)));
        offset += 4;
    }
    std::vector<Label> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = get_u32(bytes, offset);
        if (labels[i] >= k) {
            throw SchemaError("dataset: label " + std::to_string(labels[i]) + " at byte offset " +
                              std::to_string(offset) + " is >= K=" + std::to_string(k));
        }
        offset += 4;
    }
    Tensor t;
    try {
        t = Tensor(n, m, std::move(features));
    } catch (const NumericalError& e) {
        throw SchemaError(std::string("dataset: ") + e.what());
    }
    return Dataset{Batch(std::move(t), std::move(labels)), k};
}

Json network_to_json(const Network& net) {
    Json layers = Json::array();
    for (const auto& layer : net.layers()) {
        if (const auto* d = std::get_if<DenseLayer>(&layer)) {
            Json l;
            l["kind"] = "dense";
            l["in"] = d->in_dim;
            l["out"] = d->out_dim;
            l["w"] = float_array(d->weight);
            l["b"] = float_array(d->bias);
            layers.push_back(std::move(l));
        } else {
            layers.push_back(Json{{"kind", "relu"}});
        }
    }
    Json doc;
    doc["input_dim"] = net.input_dim();
    doc["class_count"] = net.class_count();
    doc["layers"] = std::move(layers);
    return doc;
}

Network network_from_json(const Json& doc) {
    const auto input_dim = get_field<std::size_t>(doc, "input_dim", "model");
    const auto class_count = get_field<std::size_t>(doc, "class_count", "model");
    const auto layer_docs = get_field<Json>(doc, "layers", "model");
    if (!layer_docs.is_array()) throw SchemaError("model: 'layers' must be an array");
    std::vector<LayerSpec> layers;
    for (std::size_t i = 0; i < layer_docs.size(); ++i) {
        const std::string where = "model: layer " + std::to_string(i);
        const auto kind = get_field<std::string>(layer_docs[i], "kind", where);
        if (kind == "relu") {
            layers.emplace_back(ReluLayer{});
        } else if (kind == "dense") {
            DenseLayer d;
            d.in_dim = get_field<std::size_t>(layer_docs[i], "in", where);
            d.out_dim = get_field<std::size_t>(layer_docs[i], "out", where);
            d.weight = get_field<std::vector<double>>(layer_docs[i], "w", where);
            d.bias = get_field<std::vector<double>>(layer_docs[i], "b", where);
            layers.emplace_back(std::move(d));
        } else {
            throw SchemaError(where + ": unknown kind '" + kind + "'");
        }
    }
    Network net = [&] {
        try {
            return Network(input_dim, std::move(layers));
        } catch (const SchemaError& e) {
            throw SchemaError(std::string("model: ") + e.what());
        }
    }();
    if (net.class_count() != class_count) {
        throw SchemaError("model: class_count " + std::to_string(class_count) + " but final layer has width " +
                          std::to_string(net.class_count()));
    }
    return net;
}

Json calibrator_to_json(const LinearCalib& calib) {
    Json doc;
    doc["family"] = std::string(family_name(calib.family));
    doc["T"] = calib.temperature;
    doc["W"] = float_array(calib.weight.values());
    doc["b"] = float_array(calib.bias);
    return doc;
}

LinearCalib calibrator_from_json(const Json& doc) {
    LinearCalib c;
    c.family = parse_family(get_field<std::string>(doc, "family", "calibrator"));
    c.temperature = get_field<double>(doc, "T", "calibrator");
    auto w = get_field<std::vector<double>>(doc, "W", "calibrator");
    c.bias = get_field<std::vector<double>>(doc, "b", "calibrator");
    if (c.family == CalibFamily::temperature) {
        if (!(c.temperature > 0.0)) throw SchemaError("calibrator: T must be positive");
        if (!w.empty() || !c.bias.empty()) throw SchemaError("calibrator: temperature family carries no W or b");
        return c;
    }
    const std::size_t k = c.bias.size();
    if (k < 2 || w.size() != k * k) {
        throw SchemaError("calibrator: W has " + std::to_string(w.size()) + " entries for " + std::to_string(k) +
                          " classes");
    }
    c.weight = Tensor(k, k, std::move(w));
    if (c.family == CalibFamily::vector) {
        for (std::size_t r = 0; r < k; ++r) {
            for (std::size_t col = 0; col < k; ++col) {
                if (r != col && c.weight(r, col) != 0.0) throw SchemaError("calibrator: vector family W must be diagonal");
            }
        }
    }
    return c;
}

Json clamp_params_to_json(const ClampParams& params) {
    Json doc;
    doc["delta"] = float_array(params.delta);
    doc["T"] = params.temperature;
    return doc;
}

ClampParams clamp_params_from_json(const Json& doc) {
    ClampParams p;
    p.delta = get_field<std::vector<double>>(doc, "delta", "clamp params");
    p.temperature = get_field<double>(doc, "T", "clamp params");
    if (!(p.temperature > 0.0)) throw SchemaError("clamp params: T must be positive");
    if (p.delta.empty()) throw SchemaError("clamp params: empty delta");
    return p;
}

Json metric_report_to_json(const MetricReport& r) {
    Json doc;
    doc["accuracy"] = r.accuracy;
    doc["mean_entropy"] = r.mean_entropy;
    doc["ece"] = r.ece;
    doc["ace"] = r.ace;
    doc["sce"] = r.sce;
    doc["nll"] = r.nll;
    doc["bins"] = r.bins;
    doc["ranges"] = r.ranges;
    return doc;
}

MetricReport metric_report_from_json(const Json& doc) {
    MetricReport r;
    r.accuracy = get_field<double>(doc, "accuracy", "report");
    r.mean_entropy = get_field<double>(doc, "mean_entropy", "report");
    r.ece = get_field<double>(doc, "ece", "report");
    r.ace = get_field<double>(doc, "ace", "report");
    r.sce = get_field<double>(doc, "sce", "report");
    r.nll = get_field<double>(doc, "nll", "report");
    r.bins = get_field<std::size_t>(doc, "bins", "report");
    r.ranges = get_field<std::size_t>(doc, "ranges", "report");
    return r;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ParseError("cannot write " + path.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw ParseError("write failed for " + path.string());
}

Json parse_json(std::string_view text, const std::string& what) {
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(what + ": malformed JSON at byte offset " + std::to_string(e.byte) + " (" + e.what() + ")");
    }
}

std::string dump_json(const Json& doc) { return doc.dump(2) + "\n"; }

Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

void save_dataset(const std::filesystem::path& path, const Dataset& data) { write_file(path, encode_dataset(data)); }

Network load_network(const std::filesystem::path& path) {
    return network_from_json(parse_json(read_file(path), path.string()));
}

void save_network(const std::filesystem::path& path, const Network& net) {
    write_file(path, dump_json(network_to_json(net)));
}

}  // namespace nclamp
