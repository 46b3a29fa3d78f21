#pragma once

#include <filesystem>
#include <string>

#include "mobintent/world.hpp"

namespace mobintent {

inline constexpr int kFormatVersion = 1;

// World file: one JSON document with the road counts as a sparse pair map.
void save_world(const World& world, const std::filesystem::path& path);
World load_world(const std::filesystem::path& path);
std::string world_to_json_string(const World& world);

// Corpus file: one-line manifest (format_version, world_hash, seed) followed by
// one trajectory per line. Lossless: load(save(x)) == x field for field.
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);
std::string corpus_to_string(const Corpus& corpus);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace mobintent
