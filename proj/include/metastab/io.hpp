#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "metastab/chain.hpp"

namespace metastab {

/// Contents of a chain-spec document.
struct ChainSpec {
    Chain chain;
    std::optional<Partition> partition;
};

/// Parses {"states": [...], "rates": [[from, to, rate], ...],
/// "partition": {"valleys": [[...], ...], "delta": [...]}} with the
/// partition optional. Malformed JSON, wrong shapes and unknown keys throw
/// ParseError; chain and partition validation errors keep their own codes.
ChainSpec parse_chain_spec(std::string_view text);

/// Parses a partition object, either bare or wrapped as {"partition": {...}}.
Partition parse_partition(const Chain& chain, std::string_view text);

/// Canonical chain-spec JSON: states in index order, rates sorted by
/// (from, to) index, doubles printed so that parsing gives them back
/// bit-for-bit.
std::string emit_chain_spec(const Chain& chain, const std::optional<Partition>& partition = std::nullopt);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

/// "fnv1a64:<16 hex digits>" of the canonical chain-spec JSON.
std::string fingerprint(const Chain& chain, const std::optional<Partition>& partition = std::nullopt);

/// Reads a whole file; throws ParseError when it cannot be opened.
std::string read_file(const std::string& path);

}  // namespace metastab
