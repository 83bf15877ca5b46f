#pragma once

// JSON for configs and reports, checkpoint files (JSON or binary) and the
// dataset CSV format.

#include <cstdint>
#include <string>

#include "json.hpp"
#include "mos/dataset.hpp"
#include "mos/eval.hpp"
#include "mos/model.hpp"
#include "mos/synth.hpp"
#include "mos/trainer.hpp"

namespace mos {

using Json = nlohmann::ordered_json;

void to_json(Json &j, const GeneratorConfig &c);
void from_json(const Json &j, GeneratorConfig &c);
void to_json(Json &j, const MosConfig &c);
void from_json(const Json &j, MosConfig &c);
void to_json(Json &j, const TrainConfig &c);
void from_json(const Json &j, TrainConfig &c);
void to_json(Json &j, const SweepGrid &g);
void from_json(const Json &j, SweepGrid &g);
void to_json(Json &j, const SplitSpec &s);
void from_json(const Json &j, SplitSpec &s);

void to_json(Json &j, const TrainHistory &h);
void to_json(Json &j, const SweepResult &r);
void to_json(Json &j, const PenaltyStats &s);
void to_json(Json &j, const SplitReport &r);
void to_json(Json &j, const ShiftVerdict &v);
Json tensor_to_json(const Tensor2 &t);

/// Fixed-width decimal with 17 significant digits.
std::string format_double(double value);

// --- checkpoints -----------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

std::string checkpoint_to_json(const ModelParams &params);
ModelParams checkpoint_from_json(const std::string &text);

std::string checkpoint_to_binary(const ModelParams &params);
ModelParams checkpoint_from_binary(const std::string &bytes);

/// Picks the format from the first byte (binary files start with a magic).
ModelParams checkpoint_from_bytes(const std::string &bytes);

// --- datasets ---------------------------------------------------------------

inline constexpr int kDatasetVersion = 1;

struct DatasetHeader {
    std::string split;
    std::uint64_t seed = 0;
    GeneratorConfig generator;
};

/// First line: `# {json header}`; second line: column names; then one row
/// per instance as `y,a_1..a_G,x_1..x_D`.
std::string dataset_to_csv(const Dataset &data, const DatasetHeader &header);

struct LoadedDataset {
    DatasetHeader header;
    Dataset data;
};

/// Parses the CSV; when `expected` is given the header's generator settings
/// must match it (FormatError otherwise).
LoadedDataset dataset_from_csv(const std::string &text, const GeneratorConfig *expected = nullptr);

} // namespace mos
