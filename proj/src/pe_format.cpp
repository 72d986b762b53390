#include "byteveil/pe_format.hpp"

#include "byteveil/error.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>

namespace byteveil {

namespace {

std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t off)
{
    return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}

std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t off)
{
    return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
           (static_cast<std::uint32_t>(b[off + 2]) << 16) | (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

} // namespace

std::string SectionEntry::name_string() const
{
    auto end = std::find(name.begin(), name.end(), '\0');
    return std::string(name.begin(), end);
}

std::size_t PeMetadata::end_of_image() const noexcept
{
    std::size_t end = 0;
    for (const auto& s : sections) {
        if (s.raw_size > 0)
            end = std::max<std::size_t>(end, std::size_t{s.raw_offset} + s.raw_size);
    }
    return end;
}

PeMetadata parse_pe(const RawBinary& binary)
{
    const auto b = binary.view();
    const std::size_t size = b.size();

    if (size < 2)
        throw Error(ErrorCode::MalformedDosHeader, "file shorter than the DOS magic");
    PeMetadata meta;
    meta.dos_magic = read_u16(b, 0);
    if (meta.dos_magic != pe::kDosMagic)
        throw Error(ErrorCode::MalformedDosHeader, "missing MZ magic");

    if (size < pe::kDosHeaderSize)
        throw Error(ErrorCode::MalformedPeHeader, "DOS header truncated before e_lfanew");
    meta.e_lfanew = read_u32(b, pe::kLfanewOffset);

    const std::size_t coff = std::size_t{meta.e_lfanew} + 4;
    if (meta.e_lfanew > size || coff + pe::kCoffHeaderSize > size)
        throw Error(ErrorCode::MalformedPeHeader, "e_lfanew points past end of file");
    meta.pe_signature = read_u32(b, meta.e_lfanew);
    if (meta.pe_signature != pe::kPeSignature)
        throw Error(ErrorCode::MalformedPeHeader, "bad PE signature");

    meta.machine = read_u16(b, coff);
    meta.num_sections = read_u16(b, coff + 2);
    meta.optional_header_size = read_u16(b, coff + 16);

    const std::size_t table = coff + pe::kCoffHeaderSize + meta.optional_header_size;
    const std::size_t table_end = table + std::size_t{meta.num_sections} * pe::kSectionEntrySize;
    if (table_end > size)
        throw Error(ErrorCode::TruncatedSectionTable,
                    "section table needs " + std::to_string(table_end) + " bytes, file has " +
                        std::to_string(size));

    meta.sections.reserve(meta.num_sections);
    for (std::size_t i = 0; i < meta.num_sections; ++i) {
        const std::size_t off = table + i * pe::kSectionEntrySize;
        SectionEntry s;
        std::copy_n(b.begin() + static_cast<std::ptrdiff_t>(off), 8, s.name.begin());
        s.virtual_size = read_u32(b, off + 8);
        s.virtual_address = read_u32(b, off + 12);
        s.raw_size = read_u32(b, off + 16);
        s.raw_offset = read_u32(b, off + 20);
        if (s.raw_size > 0 && std::size_t{s.raw_offset} + s.raw_size > size)
            throw Error(ErrorCode::MalformedPeHeader,
                        "section '" + s.name_string() + "' raw data extends past end of file");
        meta.sections.push_back(s);
    }
    return meta;
}

RawBinary append_overlay(const RawBinary& binary, std::span<const std::uint8_t> padding)
{
    parse_pe(binary);
    RawBinary out;
    out.bytes.reserve(binary.length() + padding.size());
    out.bytes = binary.bytes;
    out.bytes.insert(out.bytes.end(), padding.begin(), padding.end());
    return out;
}

std::size_t informative_length(const RawBinary& binary) noexcept
{
    return binary.length();
}

RawBinary read_binary(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorCode::IoError, "cannot open " + path.string());
    RawBinary out;
    out.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    if (in.bad())
        throw Error(ErrorCode::IoError, "read failed for " + path.string());
    return out;
}

void write_binary(const std::filesystem::path& path, const RawBinary& binary)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error(ErrorCode::IoError, "cannot create " + path.string());
    out.write(reinterpret_cast<const char*>(binary.bytes.data()),
              static_cast<std::streamsize>(binary.bytes.size()));
    if (!out)
        throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

} // namespace byteveil
