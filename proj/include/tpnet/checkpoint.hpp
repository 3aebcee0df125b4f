#pragma once

// Text checkpoints. A header of `key = value` lines describes the network and
// the smoothing, followed by one block per layer:
//
//   layer 0
//   first <rows> <cols>
//   <one line per row, values separated by spaces>
//   first_bias <size>
//   <values>
//   second <rows> <cols>     (bottleneck only)
//   ...
//   second_bias <size>       (bottleneck only)
//   ...
//   end
//
// Values use the shortest decimal form that round-trips, so a checkpoint read
// back reproduces the parameters bit for bit.

#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "tpnet/error.hpp"
#include "tpnet/format.hpp"
#include "tpnet/resnet.hpp"
#include "tpnet/softce.hpp"

namespace tpnet {

inline constexpr std::string_view kCheckpointMagic = "tpnet-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    NetworkParams params;
    int num_classes = 2;
    double p_d = 0.95;

    SmoothingSpec smoothing() const { return SmoothingSpec(num_classes, p_d); }
};

inline void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
    const NetworkParams& p = ck.params;
    out << "format = " << kCheckpointMagic << '\n'
        << "version = " << kCheckpointVersion << '\n'
        << "arch = " << to_string(p.arch) << '\n'
        << "depth = " << p.depth() << '\n'
        << "state_dim = " << p.state_dim << '\n'
        << "hidden_dim = " << p.hidden_dim << '\n'
        << "activation1 = " << to_string(p.sigma1) << '\n'
        << "activation2 = " << to_string(p.sigma2) << '\n'
        << "num_classes = " << ck.num_classes << '\n'
        << "p_d = " << format_double(ck.p_d) << '\n';

    auto write_matrix = [&](std::string_view name, const Matrix& m) {
        out << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) {
                out << (j ? " " : "") << format_double(m(i, j));
            }
            out << '\n';
        }
    };
    auto write_vector = [&](std::string_view name, const Vector& v) {
        out << name << ' ' << v.size() << '\n';
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            out << (i ? " " : "") << format_double(v[i]);
        }
        out << '\n';
    };
    for (int k = 0; k < p.depth(); ++k) {
        const LayerParams& l = p.layers[k];
        out << "layer " << k << '\n';
        write_matrix("first", l.first);
        write_vector("first_bias", l.first_bias);
        if (p.arch == Architecture::bottleneck) {
            write_matrix("second", l.second);
            write_vector("second_bias", l.second_bias);
        }
    }
    out << "end\n";
}

namespace detail {

class LineReader {
public:
    LineReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

    std::string next() {
        std::string line;
        if (!std::getline(in_, line)) {
            fail("unexpected end of file");
        }
        ++line_no_;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        return line;
    }

    [[noreturn]] void fail(const std::string& what) const { fail_at(line_no_, what); }

    [[noreturn]] void fail_at(int line, const std::string& what) const {
        throw ParseError(source_, "line " + std::to_string(line), what);
    }

    int line_no() const noexcept { return line_no_; }

    std::vector<std::string> tokens(const std::string& line) const {
        std::istringstream ss(line);
        std::vector<std::string> out;
        for (std::string t; ss >> t;) {
            out.push_back(t);
        }
        return out;
    }

    long long as_int(const std::string& s) const {
        const auto v = parse_int(s);
        if (!v) {
            fail("expected an integer, found '" + s + "'");
        }
        return *v;
    }

    double as_double(const std::string& s) const {
        const auto v = parse_double(s);
        if (!v) {
            fail("expected a number, found '" + s + "'");
        }
        if (!std::isfinite(*v)) {
            fail("non-finite value '" + s + "'");
        }
        return *v;
    }

private:
    std::istream& in_;
    std::string source_;
    int line_no_ = 0;
};

} // namespace detail

inline Checkpoint read_checkpoint(std::istream& in, const std::string& source = "checkpoint") {
    detail::LineReader rd(in, source);
    std::map<std::string, std::string> header;
    std::map<std::string, int> header_line;
    static const std::vector<std::string> keys = {"format",      "version",     "arch",
                                                  "depth",       "state_dim",   "hidden_dim",
                                                  "activation1", "activation2", "num_classes",
                                                  "p_d"};
    for (const auto& key : keys) {
        const std::string line = rd.next();
        const auto eq = line.find(" = ");
        if (eq == std::string::npos || line.substr(0, eq) != key) {
            rd.fail("expected '" + key + " = ...'");
        }
        header[key] = line.substr(eq + 3);
        header_line[key] = rd.line_no();
    }
    if (header["format"] != kCheckpointMagic) {
        rd.fail_at(header_line["format"], "not a tpnet checkpoint");
    }
    if (header["version"] != std::to_string(kCheckpointVersion)) {
        rd.fail_at(header_line["version"], "unsupported checkpoint version " + header["version"]);
    }

    Checkpoint ck;
    const auto arch = parse_architecture(header["arch"]);
    const auto s1 = parse_activation(header["activation1"]);
    const auto s2 = parse_activation(header["activation2"]);
    if (!arch) {
        rd.fail_at(header_line["arch"], "unknown architecture '" + header["arch"] + "'");
    }
    if (!s1 || !s2) {
        rd.fail_at(header_line[s1 ? "activation2" : "activation1"], "unknown activation name");
    }
    auto header_int = [&](const std::string& key) {
        const auto v = parse_int(header[key]);
        if (!v) {
            rd.fail_at(header_line[key], "expected an integer, found '" + header[key] + "'");
        }
        return *v;
    };
    const long long depth = header_int("depth");
    const long long n = header_int("state_dim");
    const long long h = header_int("hidden_dim");
    ck.num_classes = static_cast<int>(header_int("num_classes"));
    const auto p_d = parse_double(header["p_d"]);
    if (!p_d) {
        rd.fail_at(header_line["p_d"], "expected a number, found '" + header["p_d"] + "'");
    }
    ck.p_d = *p_d;
    if (depth < 0 || n < 1 || h < 0 || (*arch == Architecture::bottleneck && h < 1)) {
        rd.fail("invalid network dimensions in header");
    }
    try {
        (void)ck.smoothing();
        ck.params = make_network(*arch, static_cast<int>(depth), static_cast<int>(n),
                                 static_cast<int>(h), *s1, *s2);
    } catch (const ValidationError& e) {
        rd.fail(e.what());
    }

    auto read_matrix = [&](std::string_view name, Matrix& m) {
        const auto t = rd.tokens(rd.next());
        if (t.size() != 3 || t[0] != name || rd.as_int(t[1]) != m.rows() ||
            rd.as_int(t[2]) != m.cols()) {
            rd.fail("expected '" + std::string(name) + " " + std::to_string(m.rows()) + " " +
                    std::to_string(m.cols()) + "'");
        }
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            const auto row = rd.tokens(rd.next());
            if (static_cast<Eigen::Index>(row.size()) != m.cols()) {
                rd.fail("expected " + std::to_string(m.cols()) + " values, found " +
                        std::to_string(row.size()));
            }
            for (Eigen::Index j = 0; j < m.cols(); ++j) {
                m(i, j) = rd.as_double(row[static_cast<std::size_t>(j)]);
            }
        }
    };
    auto read_vector = [&](std::string_view name, Vector& v) {
        const auto t = rd.tokens(rd.next());
        if (t.size() != 2 || t[0] != name || rd.as_int(t[1]) != v.size()) {
            rd.fail("expected '" + std::string(name) + " " + std::to_string(v.size()) + "'");
        }
        const auto vals = rd.tokens(rd.next());
        if (static_cast<Eigen::Index>(vals.size()) != v.size()) {
            rd.fail("expected " + std::to_string(v.size()) + " values, found " +
                    std::to_string(vals.size()));
        }
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            v[i] = rd.as_double(vals[static_cast<std::size_t>(i)]);
        }
    };

    for (int k = 0; k < ck.params.depth(); ++k) {
        const auto t = rd.tokens(rd.next());
        if (t.size() != 2 || t[0] != "layer" || rd.as_int(t[1]) != k) {
            rd.fail("expected 'layer " + std::to_string(k) + "'");
        }
        LayerParams& l = ck.params.layers[k];
        read_matrix("first", l.first);
        read_vector("first_bias", l.first_bias);
        if (ck.params.arch == Architecture::bottleneck) {
            read_matrix("second", l.second);
            read_vector("second_bias", l.second_bias);
        }
        if (!l.first.allFinite() || !l.first_bias.allFinite() || !l.second.allFinite() ||
            !l.second_bias.allFinite()) {
            rd.fail("non-finite parameter in layer " + std::to_string(k));
        }
    }
    if (rd.next() != "end") {
        rd.fail("expected 'end'");
    }
    return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream out(path);
    if (!out) {
        throw ValidationError(path + ": cannot open for writing");
    }
    write_checkpoint(out, ck);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError(path + ": cannot open checkpoint");
    }
    return read_checkpoint(in, path);
}

} // namespace tpnet
