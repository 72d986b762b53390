#ifndef BYTEVEIL_PE_FORMAT_HPP
#define BYTEVEIL_PE_FORMAT_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace byteveil {

/// An executable's bytes. The whole on-disk content counts as informative.
struct RawBinary {
    std::vector<std::uint8_t> bytes;

    std::size_t length() const noexcept { return bytes.size(); }
    std::span<const std::uint8_t> view() const noexcept { return bytes; }

    bool operator==(const RawBinary&) const = default;
};

struct SectionEntry {
    std::array<char, 8> name{};
    std::uint32_t raw_offset = 0;
    std::uint32_t raw_size = 0;
    std::uint32_t virtual_address = 0;
    std::uint32_t virtual_size = 0;

    std::string name_string() const;
    bool operator==(const SectionEntry&) const = default;
};

struct PeMetadata {
    std::uint16_t dos_magic = 0;
    std::uint32_t e_lfanew = 0;
    std::uint32_t pe_signature = 0;
    std::uint16_t machine = 0;
    std::uint16_t num_sections = 0;
    std::uint16_t optional_header_size = 0;
    std::vector<SectionEntry> sections;

    /// First byte past the last section's raw data (or past the headers when
    /// every section is empty). Bytes beyond it form the overlay.
    std::size_t end_of_image() const noexcept;

    bool operator==(const PeMetadata&) const = default;
};

namespace pe {

inline constexpr std::uint16_t kDosMagic = 0x5A4D;         // "MZ" read little-endian
inline constexpr std::uint32_t kPeSignature = 0x00004550;  // "PE\0\0" read little-endian
inline constexpr std::size_t kDosHeaderSize = 0x40;
inline constexpr std::size_t kLfanewOffset = 0x3C;
inline constexpr std::size_t kCoffHeaderSize = 20;
inline constexpr std::size_t kSectionEntrySize = 40;

} // namespace pe

/// Reads the DOS header, PE signature, COFF header and section table.
/// Section contents and optional-header fields are never inspected.
PeMetadata parse_pe(const RawBinary& binary);

/// Returns `binary` with `padding` written verbatim after its last byte.
/// Headers and the section table are left untouched.
RawBinary append_overlay(const RawBinary& binary, std::span<const std::uint8_t> padding);

std::size_t informative_length(const RawBinary& binary) noexcept;

RawBinary read_binary(const std::filesystem::path& path);
void write_binary(const std::filesystem::path& path, const RawBinary& binary);

} // namespace byteveil

#endif
