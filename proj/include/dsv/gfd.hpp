#pragma once

#include "dsv/grid.hpp"

#include <filesystem>
#include <variant>

namespace dsv {

// GFD: the on-disk container for fields and ensembles. Little-endian
// throughout; byte-level layout documented in FORMAT.md.

using FieldOrEnsemble = std::variant<Field, EnsembleField>;

void write_gfd(const std::filesystem::path& path, const Field& field);
void write_gfd(const std::filesystem::path& path, const EnsembleField& ens);

FieldOrEnsemble read_gfd(const std::filesystem::path& path);
Field read_gfd_field(const std::filesystem::path& path);
EnsembleField read_gfd_ensemble(const std::filesystem::path& path);

// In-memory encode/decode, used by the file functions and by fuzz tests.
std::vector<std::uint8_t> encode_gfd(const Field& field);
std::vector<std::uint8_t> encode_gfd(const EnsembleField& ens);
FieldOrEnsemble decode_gfd(std::span<const std::uint8_t> bytes);

} // namespace dsv
