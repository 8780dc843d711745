#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lvsmooth/errors.hpp"

namespace lvsmooth {

/// Highest candidate polynomial order used by the smoother; a slice must hold
/// at least kMaxCandidateOrder + 2 quotes to support that fit.
inline constexpr int kMaxCandidateOrder = 3;
inline constexpr std::size_t kMinQuotesPerSlice = kMaxCandidateOrder + 2;

/// One observed implied-volatility point. Immutable after validation.
struct Quote {
    double strike = 0.0;    ///< same currency unit as spot, > 0
    double maturity = 0.0;  ///< year fraction, > 0
    double iv_mid = 0.0;    ///< annualized decimal vol, > 0
    std::optional<double> iv_bid;
    std::optional<double> iv_ask;
    double volume = 0.0;    ///< trading volume, >= 0 (0 treated as 1 for density weighting)

    bool operator==(const Quote&) const = default;
};

/// All quotes of one maturity, strikes strictly increasing.
struct QuoteSlice {
    double maturity = 0.0;
    std::vector<Quote> quotes;

    bool operator==(const QuoteSlice&) const = default;

    std::vector<double> strikes() const {
        std::vector<double> k(quotes.size());
        for (std::size_t i = 0; i < quotes.size(); ++i) k[i] = quotes[i].strike;
        return k;
    }
    std::vector<double> mids() const {
        std::vector<double> v(quotes.size());
        for (std::size_t i = 0; i < quotes.size(); ++i) v[i] = quotes[i].iv_mid;
        return v;
    }
    std::vector<double> volumes() const {
        std::vector<double> v(quotes.size());
        for (std::size_t i = 0; i < quotes.size(); ++i) v[i] = quotes[i].volume;
        return v;
    }
};

/// Full quoted surface with flat rate and dividend yield.
struct MarketSurface {
    double spot = 1.0;
    double rate = 0.0;
    double dividend = 0.0;
    std::vector<QuoteSlice> slices;

    bool operator==(const MarketSurface&) const = default;

    double forward(double t) const { return spot * std::exp((rate - dividend) * t); }
};

namespace detail {

inline std::string quote_label(const Quote& q) {
    std::ostringstream os;
    os << "(strike=" << q.strike << ", maturity=" << q.maturity << ")";
    return os.str();
}

} // namespace detail

inline void validate_quote(const Quote& q) {
    if (!(q.strike > 0.0)) throw validation_error("quote " + detail::quote_label(q) + ": strike must be > 0");
    if (!(q.maturity > 0.0))
        throw validation_error("quote " + detail::quote_label(q) + ": maturity must be > 0");
    if (!(q.iv_mid > 0.0))
        throw validation_error("quote " + detail::quote_label(q) + ": iv_mid must be > 0");
    if (!(q.volume >= 0.0))
        throw validation_error("quote " + detail::quote_label(q) + ": volume must be >= 0");
    if (q.iv_bid && q.iv_ask) {
        if (!(*q.iv_bid <= q.iv_mid && q.iv_mid <= *q.iv_ask))
            throw validation_error("quote " + detail::quote_label(q) +
                                   ": requires iv_bid <= iv_mid <= iv_ask");
    }
}

inline void validate_slice(const QuoteSlice& s) {
    if (s.quotes.size() < kMinQuotesPerSlice)
        throw validation_error("slice at maturity " + std::to_string(s.maturity) + ": needs >= " +
                               std::to_string(kMinQuotesPerSlice) + " quotes, has " +
                               std::to_string(s.quotes.size()));
    for (const auto& q : s.quotes) {
        validate_quote(q);
        if (q.maturity != s.maturity)
            throw validation_error("quote " + detail::quote_label(q) +
                                   ": maturity differs from slice maturity");
    }
    for (std::size_t i = 0; i + 1 < s.quotes.size(); ++i) {
        if (!(s.quotes[i].strike < s.quotes[i + 1].strike))
            throw validation_error("slice at maturity " + std::to_string(s.maturity) +
                                   ": strikes must be strictly increasing (duplicate or disorder at strike " +
                                   std::to_string(s.quotes[i + 1].strike) + ")");
    }
}

inline void validate_surface(const MarketSurface& m) {
    if (!(m.spot > 0.0)) throw validation_error("surface: spot must be > 0");
    if (m.slices.empty()) throw validation_error("surface: slice list is empty");
    for (const auto& s : m.slices) validate_slice(s);
    for (std::size_t i = 0; i + 1 < m.slices.size(); ++i) {
        if (!(m.slices[i].maturity < m.slices[i + 1].maturity))
            throw validation_error("surface: maturities must be strictly increasing");
    }
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_number(const std::string& cell, std::size_t line_no, const char* field) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(cell, &pos);
        if (pos != cell.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw parse_error("line " + std::to_string(line_no) + ": cannot parse " + field + " from '" +
                          cell + "'");
    }
}

inline std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace detail

inline constexpr const char* kSurfaceCsvHeader = "maturity,strike,iv_mid,iv_bid,iv_ask,volume";

/// Load a quoted surface from CSV. Rows are grouped by maturity and sorted by
/// strike regardless of input order; the result is fully validated.
/// Spot/rate/dividend are market-level inputs, not part of the quote file.
inline MarketSurface load_surface(const std::string& path, double spot = 1.0, double rate = 0.0,
                                  double dividend = 0.0) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open '" + path + "' for reading");
    std::string line;
    if (!std::getline(in, line)) throw parse_error("'" + path + "': empty file");
    {
        auto cells = detail::split_csv_line(line);
        std::string got;
        for (std::size_t i = 0; i < cells.size(); ++i) got += (i ? "," : "") + cells[i];
        if (got != kSurfaceCsvHeader)
            throw parse_error("line 1: header must be '" + std::string(kSurfaceCsvHeader) +
                              "', got '" + got + "'");
    }
    std::map<double, std::vector<Quote>> by_maturity;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != 6)
            throw parse_error("line " + std::to_string(line_no) + ": expected 6 cells, got " +
                              std::to_string(cells.size()));
        Quote q;
        q.maturity = detail::parse_number(cells[0], line_no, "maturity");
        q.strike = detail::parse_number(cells[1], line_no, "strike");
        q.iv_mid = detail::parse_number(cells[2], line_no, "iv_mid");
        if (!cells[3].empty()) q.iv_bid = detail::parse_number(cells[3], line_no, "iv_bid");
        if (!cells[4].empty()) q.iv_ask = detail::parse_number(cells[4], line_no, "iv_ask");
        q.volume = detail::parse_number(cells[5], line_no, "volume");
        try {
            validate_quote(q);
        } catch (const validation_error& e) {
            throw validation_error("line " + std::to_string(line_no) + ": " + e.what());
        }
        auto& bucket = by_maturity[q.maturity];
        for (const auto& other : bucket) {
            if (other.strike == q.strike)
                throw validation_error("line " + std::to_string(line_no) + ": duplicate quote " +
                                       detail::quote_label(q));
        }
        bucket.push_back(q);
    }
    MarketSurface m;
    m.spot = spot;
    m.rate = rate;
    m.dividend = dividend;
    for (auto& [mat, quotes] : by_maturity) {
        std::sort(quotes.begin(), quotes.end(),
                  [](const Quote& a, const Quote& b) { return a.strike < b.strike; });
        m.slices.push_back(QuoteSlice{mat, std::move(quotes)});
    }
    validate_surface(m);
    return m;
}

/// Write a surface to CSV with >= 17 significant digits so that
/// load_surface(save_surface(s)) == s field for field.
inline void save_surface(const MarketSurface& m, const std::string& path) {
    validate_surface(m);
    std::ofstream out(path);
    if (!out) throw io_error("cannot open '" + path + "' for writing");
    out << kSurfaceCsvHeader << "\n";
    for (const auto& s : m.slices) {
        for (const auto& q : s.quotes) {
            out << detail::format_number(q.maturity) << ',' << detail::format_number(q.strike) << ','
                << detail::format_number(q.iv_mid) << ','
                << (q.iv_bid ? detail::format_number(*q.iv_bid) : std::string()) << ','
                << (q.iv_ask ? detail::format_number(*q.iv_ask) : std::string()) << ','
                << detail::format_number(q.volume) << "\n";
        }
    }
    if (!out) throw io_error("write failed for '" + path + "'");
}

} // namespace lvsmooth
