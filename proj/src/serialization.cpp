#include "mos/serialization.hpp"

#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <sstream>

#include "mos/errors.hpp"

namespace mos {

static_assert(std::endian::native == std::endian::little, "binary checkpoints assume a little-endian host");

void to_json(Json &j, const GeneratorConfig &c) {
    j = Json{{"num_labels", c.num_labels},
             {"num_shortcuts", c.num_shortcuts},
             {"core_dim", c.core_dim},
             {"core_noise", c.core_noise ? Json(*c.core_noise) : Json(nullptr)},
             {"target_core_accuracy", c.target_core_accuracy},
             {"shortcut_noise", c.shortcut_noise},
             {"seed", c.seed},
             {"correlation", c.correlation}};
}

void from_json(const Json &j, GeneratorConfig &c) {
    GeneratorConfig d;
    c.num_labels = j.value("num_labels", d.num_labels);
    c.num_shortcuts = j.value("num_shortcuts", d.num_shortcuts);
    c.core_dim = j.value("core_dim", d.core_dim);
    if (j.contains("core_noise") && !j.at("core_noise").is_null())
        c.core_noise = j.at("core_noise").get<double>();
    else
        c.core_noise.reset();
    c.target_core_accuracy = j.value("target_core_accuracy", d.target_core_accuracy);
    c.shortcut_noise = j.value("shortcut_noise", d.shortcut_noise);
    c.seed = j.value("seed", d.seed);
    if (j.contains("correlation")) c.correlation = j.at("correlation").get<std::map<std::string, double>>();
}

void to_json(Json &j, const MosConfig &c) {
    j = Json{{"experts", c.experts},         {"num_labels", c.num_labels},   {"input_dim", c.input_dim},
             {"hidden_dim", c.hidden_dim},   {"feature_dim", c.feature_dim}, {"seed", c.seed}};
}

void from_json(const Json &j, MosConfig &c) {
    MosConfig d;
    c.experts = j.value("experts", d.experts);
    c.num_labels = j.value("num_labels", d.num_labels);
    c.input_dim = j.value("input_dim", d.input_dim);
    c.hidden_dim = j.value("hidden_dim", d.hidden_dim);
    c.feature_dim = j.value("feature_dim", d.feature_dim);
    c.seed = j.value("seed", d.seed);
}

void to_json(Json &j, const TrainConfig &c) {
    j = Json{{"model", c.model},
             {"lambda", c.lambda},
             {"ell", c.ell ? Json(*c.ell) : Json(nullptr)},
             {"ell_k_min", c.ell_k_min ? Json(*c.ell_k_min) : Json(nullptr)},
             {"batch_size", c.batch_size},
             {"epochs", c.epochs},
             {"learning_rate", c.learning_rate},
             {"seed", c.seed},
             {"shuffle", c.shuffle}};
}

void from_json(const Json &j, TrainConfig &c) {
    TrainConfig d;
    if (j.contains("model")) c.model = j.at("model").get<MosConfig>();
    c.lambda = j.value("lambda", d.lambda);
    c.ell = j.contains("ell") && !j.at("ell").is_null() ? std::optional(j.at("ell").get<std::size_t>()) : std::nullopt;
    c.ell_k_min = j.contains("ell_k_min") && !j.at("ell_k_min").is_null()
                      ? std::optional(j.at("ell_k_min").get<std::size_t>())
                      : std::nullopt;
    c.batch_size = j.value("batch_size", d.batch_size);
    c.epochs = j.value("epochs", d.epochs);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.seed = j.value("seed", d.seed);
    c.shuffle = j.value("shuffle", d.shuffle);
}

void to_json(Json &j, const SweepGrid &g) {
    j = Json{{"experts", g.experts}, {"lambdas", g.lambdas}, {"repeats", g.repeats}};
}

void from_json(const Json &j, SweepGrid &g) {
    SweepGrid d;
    g.experts = j.value("experts", d.experts);
    g.lambdas = j.value("lambdas", d.lambdas);
    g.repeats = j.value("repeats", d.repeats);
}

void to_json(Json &j, const SplitSpec &s) {
    j = Json{{"name", s.name}, {"size", s.size}};
    if (s.correlation) j["correlation"] = *s.correlation;
    if (!s.per_shortcut.empty()) j["per_shortcut"] = s.per_shortcut;
}

void from_json(const Json &j, SplitSpec &s) {
    s.name = j.at("name").get<std::string>();
    s.size = j.at("size").get<std::size_t>();
    s.correlation = j.contains("correlation") && !j.at("correlation").is_null()
                        ? std::optional(j.at("correlation").get<double>())
                        : std::nullopt;
    s.per_shortcut = j.value("per_shortcut", std::vector<double>{});
}

void to_json(Json &j, const TrainHistory &h) {
    Json epochs = Json::array();
    for (std::size_t e = 0; e < h.epochs.size(); ++e) {
        const auto &s = h.epochs[e];
        epochs.push_back(Json{{"epoch", e},
                              {"train_classification", s.train_classification},
                              {"train_penalty", s.train_penalty},
                              {"dev_accuracy", s.dev_accuracy},
                              {"dev_classification", s.dev_classification},
                              {"dev_penalty", s.dev_penalty},
                              {"dev_objective", s.dev_objective()}});
    }
    j = Json{{"epochs", epochs}, {"best_epoch", h.best_epoch}};
}

namespace {

Json candidates_json(const std::vector<SweepCandidate> &cs) {
    Json out = Json::array();
    for (const auto &c : cs)
        out.push_back(Json{{"experts", c.experts},
                           {"lambda", c.lambda},
                           {"classification", c.losses.classification},
                           {"penalty", c.losses.penalty},
                           {"sum", c.losses.sum()}});
    return out;
}

} // namespace

void to_json(Json &j, const SweepResult &r) {
    j = Json{{"stage1", candidates_json(r.stage1)},
             {"stage2", candidates_json(r.stage2)},
             {"best_experts", r.best_experts},
             {"best_lambda", r.best_lambda}};
}

void to_json(Json &j, const PenaltyStats &s) { j = Json{{"mean", s.mean}, {"std", s.std}, {"batches", s.batches}}; }

Json tensor_to_json(const Tensor2 &t) {
    Json rows = Json::array();
    for (std::size_t r = 0; r < t.rows; ++r) rows.push_back(std::vector<double>(t.row(r).begin(), t.row(r).end()));
    return rows;
}

void to_json(Json &j, const SplitReport &r) {
    Json acc = Json::object();
    for (const auto &[rule, value] : r.accuracy) acc[std::string(rule_name(rule))] = value;
    j = Json{{"split", r.split},
             {"size", r.size},
             {"accuracy", acc},
             {"penalty", r.penalty},
             {"mixture_profile", r.mixture_profile},
             {"expert_profile", tensor_to_json(r.expert_profile)}};
}

void to_json(Json &j, const ShiftVerdict &v) {
    j = Json{{"reference", v.reference},
             {"target", v.target},
             {"score", v.score},
             {"threshold", v.threshold},
             {"shifted", v.shifted}};
}

std::string format_double(double value) {
    char buf[40];
    const int n = std::snprintf(buf, sizeof buf, "%.17g", value);
    return std::string(buf, static_cast<std::size_t>(n));
}

// --- checkpoints -----------------------------------------------------------

namespace {

double layernorm_epsilon(const ModelParams &p) { return p.router.transform.norm.epsilon; }

void set_layernorm_epsilon(ModelParams &p, double eps) {
    for (auto &e : p.experts) e.transform.norm.epsilon = eps;
    p.router.transform.norm.epsilon = eps;
}

ModelParams shaped_like(const MosConfig &config) {
    // init_params fixes every shape; values are overwritten by the loader.
    return init_params(config);
}

} // namespace

std::string checkpoint_to_json(const ModelParams &params) {
    Json tensors = Json::object();
    for_each_block(params, [&](const std::string &name, std::span<const double> b) {
        Json values = Json::array();
        for (double v : b) values.push_back(v);
        tensors[name] = values;
    });
    Json j{{"format", "mos-checkpoint"},
           {"version", kCheckpointVersion},
           {"config", params.config},
           {"seed", params.config.seed},
           {"layernorm_epsilon", layernorm_epsilon(params)},
           {"tensors", tensors}};
    return j.dump(1) + "\n";
}

ModelParams checkpoint_from_json(const std::string &text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::exception &e) {
        throw FormatError(std::string("checkpoint: invalid JSON: ") + e.what());
    }
    if (j.value("format", "") != "mos-checkpoint") throw FormatError("checkpoint: not a mos-checkpoint document");
    if (j.value("version", 0) != kCheckpointVersion) throw FormatError("checkpoint: unsupported version");
    const auto config = j.at("config").get<MosConfig>();
    ModelParams p = shaped_like(config);
    set_layernorm_epsilon(p, j.value("layernorm_epsilon", 1e-5));
    const auto &tensors = j.at("tensors");
    for_each_block(p, [&](const std::string &name, std::span<double> b) {
        if (!tensors.contains(name)) throw FormatError("checkpoint: missing tensor '" + name + "'");
        const auto &values = tensors.at(name);
        if (values.size() != b.size()) throw FormatError("checkpoint: tensor '" + name + "' has wrong size");
        for (std::size_t i = 0; i < b.size(); ++i) b[i] = values[i].get<double>();
    });
    return p;
}

namespace {

constexpr char kMagic[8] = {'M', 'O', 'S', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::string &out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string &in, std::size_t &pos) {
    if (pos + sizeof(T) > in.size()) throw FormatError("checkpoint: truncated binary file");
    T value;
    std::memcpy(&value, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return value;
}

} // namespace

std::string checkpoint_to_binary(const ModelParams &params) {
    std::string out(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    const auto &c = params.config;
    for (std::uint64_t v : {std::uint64_t(c.experts), std::uint64_t(c.num_labels), std::uint64_t(c.input_dim),
                            std::uint64_t(c.hidden_dim), std::uint64_t(c.feature_dim), c.seed})
        put<std::uint64_t>(out, v);
    put<double>(out, layernorm_epsilon(params));
    for_each_block(params, [&](const std::string &, std::span<const double> b) {
        put<std::uint64_t>(out, b.size());
        for (double v : b) put<double>(out, v);
    });
    return out;
}

ModelParams checkpoint_from_binary(const std::string &bytes) {
    if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
        throw FormatError("checkpoint: bad binary magic");
    std::size_t pos = sizeof kMagic;
    if (take<std::uint32_t>(bytes, pos) != kCheckpointVersion) throw FormatError("checkpoint: unsupported version");
    MosConfig c;
    c.experts = take<std::uint64_t>(bytes, pos);
    c.num_labels = take<std::uint64_t>(bytes, pos);
    c.input_dim = take<std::uint64_t>(bytes, pos);
    c.hidden_dim = take<std::uint64_t>(bytes, pos);
    c.feature_dim = take<std::uint64_t>(bytes, pos);
    c.seed = take<std::uint64_t>(bytes, pos);
    ModelParams p = shaped_like(c);
    set_layernorm_epsilon(p, take<double>(bytes, pos));
    for_each_block(p, [&](const std::string &name, std::span<double> b) {
        if (take<std::uint64_t>(bytes, pos) != b.size()) throw FormatError("checkpoint: block '" + name + "' size mismatch");
        for (double &v : b) v = take<double>(bytes, pos);
    });
    if (pos != bytes.size()) throw FormatError("checkpoint: trailing bytes in binary file");
    return p;
}

ModelParams checkpoint_from_bytes(const std::string &bytes) {
    if (bytes.size() >= sizeof kMagic && std::memcmp(bytes.data(), kMagic, sizeof kMagic) == 0)
        return checkpoint_from_binary(bytes);
    return checkpoint_from_json(bytes);
}

// --- datasets ---------------------------------------------------------------

std::string dataset_to_csv(const Dataset &data, const DatasetHeader &header) {
    Json h{{"format", "mos-dataset"},
           {"version", kDatasetVersion},
           {"split", header.split},
           {"seed", header.seed},
           {"rows", data.size()},
           {"generator", header.generator}};
    std::string out = "# " + h.dump() + "\n";
    out += "y";
    for (std::size_t g = 0; g < data.num_shortcuts; ++g) out += ",a_" + std::to_string(g + 1);
    for (std::size_t c = 0; c < data.features.cols; ++c) out += ",x_" + std::to_string(c + 1);
    out += "\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
        out += std::to_string(data.labels[i]);
        for (std::size_t g = 0; g < data.num_shortcuts; ++g) out += "," + std::to_string(data.shortcut(i, g));
        for (double v : data.features.row(i)) {
            out += ',';
            out += format_double(v);
        }
        out += '\n';
    }
    return out;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return fields;
}

std::size_t parse_index(std::string_view s, std::size_t line_no) {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw FormatError("dataset: bad integer on line " + std::to_string(line_no));
    return v;
}

double parse_real(std::string_view s, std::size_t line_no) {
    // strtod accepts the full %.17g output including exponents.
    const std::string tmp(s);
    char *end = nullptr;
    const double v = std::strtod(tmp.c_str(), &end);
    if (tmp.empty() || end != tmp.c_str() + tmp.size())
        throw FormatError("dataset: bad number on line " + std::to_string(line_no));
    return v;
}

} // namespace

LoadedDataset dataset_from_csv(const std::string &text, const GeneratorConfig *expected) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line.rfind("# ", 0) != 0) throw FormatError("dataset: missing header record");
    Json h;
    try {
        h = Json::parse(line.substr(2));
    } catch (const Json::exception &e) {
        throw FormatError(std::string("dataset: bad header: ") + e.what());
    }
    if (h.value("format", "") != "mos-dataset") throw FormatError("dataset: not a mos-dataset file");
    if (h.value("version", 0) != kDatasetVersion) throw FormatError("dataset: unsupported version");

    LoadedDataset out;
    out.header.split = h.at("split").get<std::string>();
    out.header.seed = h.at("seed").get<std::uint64_t>();
    out.header.generator = h.at("generator").get<GeneratorConfig>();
    if (expected && !(out.header.generator == *expected))
        throw FormatError("dataset: header generator settings do not match the configuration");

    const auto &g = out.header.generator;
    const std::size_t groups = g.num_shortcuts;
    const std::size_t dim = g.feature_dim();
    const std::size_t rows = h.at("rows").get<std::size_t>();

    if (!std::getline(in, line)) throw FormatError("dataset: missing column names");
    if (split_fields(line).size() != 1 + groups + dim) throw FormatError("dataset: column count does not match header");

    Dataset &d = out.data;
    d.split = out.header.split;
    d.num_labels = g.num_labels;
    d.num_shortcuts = groups;
    d.features = Tensor2(rows, dim);
    d.labels.resize(rows);
    d.shortcuts.resize(rows * groups);
    std::size_t i = 0;
    std::size_t line_no = 2;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (i >= rows) throw FormatError("dataset: more rows than the header declares");
        const auto fields = split_fields(line);
        if (fields.size() != 1 + groups + dim)
            throw FormatError("dataset: wrong field count on line " + std::to_string(line_no));
        d.labels[i] = parse_index(fields[0], line_no);
        if (d.labels[i] >= g.num_labels) throw FormatError("dataset: label out of range on line " + std::to_string(line_no));
        for (std::size_t k = 0; k < groups; ++k) d.shortcuts[i * groups + k] = parse_index(fields[1 + k], line_no);
        auto x = d.features.row(i);
        for (std::size_t c = 0; c < dim; ++c) x[c] = parse_real(fields[1 + groups + c], line_no);
        ++i;
    }
    if (i != rows) throw FormatError("dataset: fewer rows than the header declares");
    return out;
}

} // namespace mos
