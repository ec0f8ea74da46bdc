#include "netsift/npy.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "netsift/errors.hpp"

namespace netsift {

namespace {

const char kMagic[] = "\x93NUMPY";

std::string shape_tuple(const std::vector<size_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        os << shape[i];
        if (i + 1 < shape.size() || shape.size() == 1) os << ",";
        if (i + 1 < shape.size()) os << " ";
    }
    os << ")";
    return os.str();
}

// Minimal parser for the literal dict the format stores. Grabs the three
// known keys; layout quirks (whitespace, quote style) are tolerated.
struct HeaderDict {
    std::string descr;
    bool fortran_order = false;
    std::vector<size_t> shape;
};

HeaderDict parse_header(const std::string& header) {
    HeaderDict out;

    auto find_value = [&](const std::string& key) -> std::string {
        auto kpos = header.find("'" + key + "'");
        if (kpos == std::string::npos)
            throw FormatError("npy header missing key '" + key + "'");
        auto colon = header.find(':', kpos);
        if (colon == std::string::npos) throw FormatError("npy header malformed");
        size_t v = colon + 1;
        while (v < header.size() && header[v] == ' ') ++v;
        return header.substr(v);
    };

    std::string descr = find_value("descr");
    if (descr.empty() || descr[0] != '\'')
        throw FormatError("npy descr is not a string literal");
    out.descr = descr.substr(1, descr.find('\'', 1) - 1);

    std::string fo = find_value("fortran_order");
    out.fortran_order = fo.rfind("True", 0) == 0;

    std::string sh = find_value("shape");
    if (sh.empty() || sh[0] != '(') throw FormatError("npy shape is not a tuple");
    size_t close = sh.find(')');
    if (close == std::string::npos) throw FormatError("npy shape tuple unterminated");
    std::string inner = sh.substr(1, close - 1);
    std::istringstream is(inner);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        std::string trimmed;
        for (char c : tok)
            if (c != ' ') trimmed += c;
        if (trimmed.empty()) continue;
        out.shape.push_back(std::stoull(trimmed));
    }
    return out;
}

}  // namespace

std::vector<uint8_t> npy_header_bytes(const std::vector<size_t>& shape) {
    std::string dict = "{'descr': '|u1', 'fortran_order': False, 'shape': " +
                       shape_tuple(shape) + ", }";
    size_t unpadded = 6 + 2 + 2 + dict.size() + 1;  // magic, version, hlen, dict, newline
    size_t pad = (64 - unpadded % 64) % 64;
    dict.append(pad, ' ');
    dict.push_back('\n');
    if (dict.size() > 0xffff) throw FormatError("npy header too large for v1.0");

    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 6);
    out.push_back(0x01);
    out.push_back(0x00);
    out.push_back(static_cast<uint8_t>(dict.size() & 0xff));
    out.push_back(static_cast<uint8_t>(dict.size() >> 8));
    out.insert(out.end(), dict.begin(), dict.end());
    return out;
}

void npy_save_u8(const std::filesystem::path& path, const NpyArray& array) {
    size_t expected = 1;
    for (size_t d : array.shape) expected *= d;
    if (array.data.size() != expected)
        throw ConfigError("npy array data does not match its shape");

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write npy file: " + path.string());
    auto header = npy_header_bytes(array.shape);
    out.write(reinterpret_cast<const char*>(header.data()),
              static_cast<std::streamsize>(header.size()));
    out.write(reinterpret_cast<const char*>(array.data.data()),
              static_cast<std::streamsize>(array.data.size()));
    if (!out) throw IoError("write failure on npy file: " + path.string());
}

NpyArray npy_load_u8(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open npy file: " + path.string());
    std::vector<uint8_t> file((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
    if (file.size() < 10 || std::memcmp(file.data(), kMagic, 6) != 0)
        throw FormatError("not an npy file: " + path.string());

    uint8_t ver_major = file[6];
    size_t header_len = 0;
    size_t header_off = 0;
    if (ver_major == 1) {
        header_len = file[8] | (file[9] << 8);
        header_off = 10;
    } else if (ver_major == 2) {
        if (file.size() < 12) throw FormatError("truncated npy v2 header");
        header_len = file[8] | (file[9] << 8) | (static_cast<size_t>(file[10]) << 16) |
                     (static_cast<size_t>(file[11]) << 24);
        header_off = 12;
    } else {
        throw FormatError("unsupported npy version " + std::to_string(ver_major));
    }
    if (file.size() < header_off + header_len)
        throw FormatError("truncated npy header: " + path.string());

    std::string header(file.begin() + static_cast<ptrdiff_t>(header_off),
                       file.begin() + static_cast<ptrdiff_t>(header_off + header_len));
    HeaderDict dict = parse_header(header);

    if (dict.descr != "|u1" && dict.descr != "u1" && dict.descr != "<u1")
        throw FormatError("npy dtype mismatch: expected unsigned 8-bit ('|u1'), got '" +
                          dict.descr + "'");
    if (dict.fortran_order)
        throw FormatError("npy layout mismatch: expected C order, got Fortran order");

    size_t count = 1;
    for (size_t d : dict.shape) count *= d;
    size_t data_off = header_off + header_len;
    if (file.size() - data_off < count)
        throw FormatError("npy data section shorter than declared shape");

    NpyArray arr;
    arr.shape = dict.shape;
    arr.data.assign(file.begin() + static_cast<ptrdiff_t>(data_off),
                    file.begin() + static_cast<ptrdiff_t>(data_off + count));
    return arr;
}

}  // namespace netsift
