#include "mmc/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace mmc {

namespace {

using nlohmann::json;

constexpr int kVersion = 1;

void write_manifest_and_blob(const std::string& stem, const std::string& kind,
                             const json& config, const ParamSet& p, uint64_t seed) {
    json manifest;
    manifest["version"] = kVersion;
    manifest["kind"] = kind;
    manifest["seed"] = seed;
    manifest["config"] = config;
    auto params = json::array();
    for (size_t i = 0; i < p.names.size(); ++i) {
        json e;
        e["name"] = p.names[i];
        e["shape"] = p.vars[i].val().shape;
        params.push_back(std::move(e));
    }
    manifest["params"] = std::move(params);

    std::ofstream mf(stem + ".json");
    check(mf.good(), "checkpoint: cannot open " + stem + ".json");
    mf << manifest.dump(2) << "\n";

    std::ofstream bf(stem + ".bin", std::ios::binary);
    check(bf.good(), "checkpoint: cannot open " + stem + ".bin");
    for (const auto& v : p.vars)
        bf.write(reinterpret_cast<const char*>(v.val().data.data()),
                 static_cast<std::streamsize>(v.val().data.size() * sizeof(double)));
}

json read_manifest(const std::string& stem, const std::string& expected_kind) {
    std::ifstream mf(stem + ".json");
    check(mf.good(), "checkpoint: missing manifest " + stem + ".json");
    json manifest = json::parse(mf, nullptr, false);
    check(!manifest.is_discarded(), "checkpoint: malformed manifest " + stem + ".json");
    check(manifest.value("version", -1) == kVersion, "checkpoint: unsupported version in " + stem);
    check(manifest.value("kind", std::string()) == expected_kind,
          "checkpoint: " + stem + " holds '" + manifest.value("kind", std::string()) +
              "', expected '" + expected_kind + "'");
    return manifest;
}

void read_blob_into(const std::string& stem, const json& manifest, ParamSet& p) {
    const auto& entries = manifest.at("params");
    check(entries.size() == p.vars.size(),
          "checkpoint: parameter count mismatch in " + stem + ".json");
    std::ifstream bf(stem + ".bin", std::ios::binary);
    check(bf.good(), "checkpoint: missing blob " + stem + ".bin");
    for (size_t i = 0; i < p.vars.size(); ++i) {
        const auto& e = entries[i];
        check(e.at("name").get<std::string>() == p.names[i],
              "checkpoint: parameter order mismatch at '" + p.names[i] + "'");
        const auto shape = e.at("shape").get<std::vector<int>>();
        check(shape == p.vars[i].val().shape,
              "checkpoint: shape mismatch for '" + p.names[i] + "'");
        Array& val = p.vars[i].mutable_val();
        bf.read(reinterpret_cast<char*>(val.data.data()),
                static_cast<std::streamsize>(val.data.size() * sizeof(double)));
        check(bf.good(), "checkpoint: blob " + stem + ".bin truncated at '" + p.names[i] + "'");
        check(val.all_finite(), "checkpoint: non-finite values in '" + p.names[i] + "'");
    }
    bf.peek();
    check(bf.eof(), "checkpoint: blob " + stem + ".bin has trailing bytes");
}

}  // namespace

void save_tokenizer(const std::string& stem, const TokenizerWeights& w, uint64_t seed) {
    json cfg;
    cfg["feature_dim"] = w.cfg.feature_dim;
    cfg["codes"] = w.cfg.codes;
    cfg["dim"] = w.cfg.dim;
    cfg["levels"] = w.cfg.levels;
    cfg["hidden"] = w.cfg.hidden;
    cfg["beta"] = w.cfg.beta;
    cfg["downsample"] = w.cfg.downsample;
    write_manifest_and_blob(stem, "tokenizer", cfg, w.params, seed);
}

TokenizerWeights load_tokenizer(const std::string& stem) {
    json manifest = read_manifest(stem, "tokenizer");
    const auto& cfg = manifest.at("config");
    TokenizerConfig c;
    c.feature_dim = cfg.at("feature_dim").get<int>();
    c.codes = cfg.at("codes").get<int>();
    c.dim = cfg.at("dim").get<int>();
    c.levels = cfg.at("levels").get<int>();
    c.hidden = cfg.at("hidden").get<int>();
    c.beta = cfg.at("beta").get<double>();
    c.downsample = cfg.at("downsample").get<int>();
    TokenizerWeights w = init_tokenizer(c, 0);
    read_blob_into(stem, manifest, w.params);
    return w;
}

namespace {

json transformer_config_json(const TransformerConfig& c) {
    json cfg;
    cfg["codes"] = c.codes;
    cfg["classes"] = c.classes;
    cfg["layers"] = c.layers;
    cfg["embed"] = c.embed;
    cfg["heads"] = c.heads;
    cfg["max_tokens"] = c.max_tokens;
    cfg["code_dim"] = c.code_dim;
    cfg["levels"] = c.levels;
    cfg["window"] = c.window;
    cfg["joints"] = c.joints;
    cfg["label_dropout"] = c.label_dropout;
    cfg["alpha"] = c.alpha;
    return cfg;
}

TransformerConfig transformer_config_from(const json& cfg) {
    TransformerConfig c;
    c.codes = cfg.at("codes").get<int>();
    c.classes = cfg.at("classes").get<int>();
    c.layers = cfg.at("layers").get<int>();
    c.embed = cfg.at("embed").get<int>();
    c.heads = cfg.at("heads").get<int>();
    c.max_tokens = cfg.at("max_tokens").get<int>();
    c.code_dim = cfg.at("code_dim").get<int>();
    c.levels = cfg.at("levels").get<int>();
    c.window = cfg.at("window").get<int>();
    c.joints = cfg.at("joints").get<int>();
    c.label_dropout = cfg.at("label_dropout").get<double>();
    c.alpha = cfg.at("alpha").get<double>();
    return c;
}

}  // namespace

void save_base(const std::string& stem, const BaseWeights& w, uint64_t seed) {
    write_manifest_and_blob(stem, "base", transformer_config_json(w.cfg), w.params, seed);
}

BaseWeights load_base(const std::string& stem) {
    json manifest = read_manifest(stem, "base");
    BaseWeights w = init_base(transformer_config_from(manifest.at("config")), 0);
    read_blob_into(stem, manifest, w.params);
    return w;
}

void save_control(const std::string& stem, const ControlWeights& w, uint64_t seed) {
    write_manifest_and_blob(stem, "control", transformer_config_json(w.cfg), w.params, seed);
}

ControlWeights load_control(const std::string& stem, const BaseWeights& base) {
    json manifest = read_manifest(stem, "control");
    const TransformerConfig c = transformer_config_from(manifest.at("config"));
    check(c.layers == base.cfg.layers && c.embed == base.cfg.embed,
          "checkpoint: control weights do not match the base architecture");
    ControlWeights w = init_control(base, 0);
    read_blob_into(stem, manifest, w.params);
    return w;
}

std::string file_hash(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    check(f.good(), "file_hash: cannot open " + path);
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
        for (std::streamsize i = 0; i < f.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (f.eof()) break;
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

bool file_exists(const std::string& path) { return std::ifstream(path).good(); }

}  // namespace mmc
