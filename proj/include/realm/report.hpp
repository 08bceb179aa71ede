#pragma once

#include <cstdio>
#include <fstream>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "realm/operator_core.hpp"

namespace realm {

inline constexpr const char* kReportSchema = "report-v1";

/// Formats a double with 17 significant digits, enough to round-trip the
/// value exactly. Non-finite values have no JSON encoding and become null.
inline std::string format_double(double v) {
    if (!std::isfinite(v)) return "null";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

/// JSON value with insertion-ordered object keys. Reports must serialize
/// bit-identically run to run, so the writer is deliberately tiny and owns
/// every formatting decision (key order, indentation, float digits).
class ReportValue {
  public:
    ReportValue() : kind_(Kind::Null) {}
    ReportValue(bool b) : kind_(Kind::Bool), bool_(b) {}                  // NOLINT
    ReportValue(int i) : kind_(Kind::Int), int_(i) {}                     // NOLINT
    ReportValue(long long i) : kind_(Kind::Int), int_(i) {}               // NOLINT
    ReportValue(Eigen::Index i) : kind_(Kind::Int), int_(i) {}            // NOLINT
    ReportValue(size_t i) : kind_(Kind::Int),                             // NOLINT
                            int_(static_cast<long long>(i)) {}
    ReportValue(double d) : kind_(Kind::Double), double_(d) {}            // NOLINT
    ReportValue(std::string s) : kind_(Kind::String), str_(std::move(s)) {}  // NOLINT
    ReportValue(const char* s) : kind_(Kind::String), str_(s) {}          // NOLINT

    static ReportValue object() {
        ReportValue v;
        v.kind_ = Kind::Object;
        return v;
    }
    static ReportValue array() {
        ReportValue v;
        v.kind_ = Kind::Array;
        return v;
    }

    ReportValue& set(const std::string& key, ReportValue value) {
        detail::require(kind_ == Kind::Object, "set() needs an object value");
        for (auto& [k, v] : entries_)
            if (k == key) {
                v = std::move(value);
                return *this;
            }
        entries_.emplace_back(key, std::move(value));
        return *this;
    }

    ReportValue& push(ReportValue value) {
        detail::require(kind_ == Kind::Array, "push() needs an array value");
        items_.push_back(std::move(value));
        return *this;
    }

    const ReportValue* find(const std::string& key) const {
        if (kind_ != Kind::Object) return nullptr;
        for (const auto& [k, v] : entries_)
            if (k == key) return &v;
        return nullptr;
    }
    const std::vector<ReportValue>& items() const { return items_; }
    bool is_object() const { return kind_ == Kind::Object; }
    double as_double() const {
        detail::require(kind_ == Kind::Double || kind_ == Kind::Int,
                        "value is not numeric");
        return kind_ == Kind::Double ? double_ : static_cast<double>(int_);
    }
    const std::string& as_string() const {
        detail::require(kind_ == Kind::String, "value is not a string");
        return str_;
    }
    bool as_bool() const {
        detail::require(kind_ == Kind::Bool, "value is not a boolean");
        return bool_;
    }

    void write(std::ostream& os, int indent = 0) const {
        const std::string pad(static_cast<size_t>(indent) * 2, ' ');
        const std::string child_pad(static_cast<size_t>(indent + 1) * 2, ' ');
        switch (kind_) {
            case Kind::Null: os << "null"; break;
            case Kind::Bool: os << (bool_ ? "true" : "false"); break;
            case Kind::Int: os << int_; break;
            case Kind::Double: os << format_double(double_); break;
            case Kind::String: write_escaped(os, str_); break;
            case Kind::Array:
                if (items_.empty()) {
                    os << "[]";
                    break;
                }
                os << "[\n";
                for (size_t i = 0; i < items_.size(); ++i) {
                    os << child_pad;
                    items_[i].write(os, indent + 1);
                    os << (i + 1 < items_.size() ? ",\n" : "\n");
                }
                os << pad << "]";
                break;
            case Kind::Object:
                if (entries_.empty()) {
                    os << "{}";
                    break;
                }
                os << "{\n";
                for (size_t i = 0; i < entries_.size(); ++i) {
                    os << child_pad;
                    write_escaped(os, entries_[i].first);
                    os << ": ";
                    entries_[i].second.write(os, indent + 1);
                    os << (i + 1 < entries_.size() ? ",\n" : "\n");
                }
                os << pad << "}";
                break;
        }
    }

    std::string str() const {
        std::ostringstream os;
        write(os);
        os << "\n";
        return os.str();
    }

  private:
    enum class Kind { Null, Bool, Int, Double, String, Array, Object };

    static void write_escaped(std::ostream& os, const std::string& s) {
        os << '"';
        for (char c : s) {
            switch (c) {
                case '"': os << "\\\""; break;
                case '\\': os << "\\\\"; break;
                case '\n': os << "\\n"; break;
                case '\t': os << "\\t"; break;
                case '\r': os << "\\r"; break;
                default:
                    if (static_cast<unsigned char>(c) < 0x20) {
                        char buf[8];
                        std::snprintf(buf, sizeof(buf), "\\u%04x", c);
                        os << buf;
                    } else {
                        os << c;
                    }
            }
        }
        os << '"';
    }

    Kind kind_;
    bool bool_ = false;
    long long int_ = 0;
    double double_ = 0.0;
    std::string str_;
    std::vector<std::pair<std::string, ReportValue>> entries_;
    std::vector<ReportValue> items_;
};

/// Starts a report with its schema tag already in place.
inline ReportValue make_report(const std::string& scenario_name,
                               const std::string& subcommand) {
    ReportValue r = ReportValue::object();
    r.set("schema", kReportSchema);
    r.set("scenario", scenario_name);
    r.set("command", subcommand);
    return r;
}

/// Complex matrix as CSV: one row per matrix row, entries as interleaved
/// real and imaginary columns (2n columns for an n-column matrix).
inline std::string matrix_csv(const COperator& m) {
    std::ostringstream os;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) os << ',';
            os << format_double(m(i, j).real()) << ',' << format_double(m(i, j).imag());
        }
        os << '\n';
    }
    return os.str();
}

/// Real matrix as CSV.
inline std::string matrix_csv(const Eigen::MatrixXd& m) {
    std::ostringstream os;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) os << ',';
            os << format_double(m(i, j));
        }
        os << '\n';
    }
    return os.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << content;
    if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

}  // namespace realm
