#pragma once

// On-disk formats: FPLB parameter files, generator checkpoints and JSON-lines round logs.

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fplab/fl_core.hpp"
#include "fplab/psg.hpp"

namespace fplab::io {

inline constexpr std::uint32_t kFplbVersion = 1;

/// 16-byte header ("FPLB", u32 version, u64 count) followed by little-endian float32 values.
void write_fplb(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_fplb(const std::filesystem::path& path);

/// Writes `<stem>.fplb` (generator parameters then batch-norm state) and `<stem>.json`.
void save_generator(const psg::PoisonGenerator& generator, const std::filesystem::path& fplb_path);
psg::PoisonGenerator load_generator(const std::filesystem::path& fplb_path);

nlohmann::json to_json(const RoundRecord& record);
RoundRecord round_from_json(const nlohmann::json& j);

/// One compact JSON object per line.
void write_round_log(const std::filesystem::path& path, std::span<const RoundRecord> records);
std::vector<RoundRecord> read_round_log(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace fplab::io
