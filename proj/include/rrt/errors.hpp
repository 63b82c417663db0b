#pragma once

#include <stdexcept>
#include <string>

namespace rrt {

// Base class for everything thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad or inconsistent configuration; message carries the field path.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error("config: " + msg) {}
};

// Malformed input file; carries the 1-based line number.
class ParseError : public Error {
public:
    ParseError(const std::string& file, long line, const std::string& msg)
        : Error(file + ":" + std::to_string(line) + ": " + msg), line_number(line) {}
    long line_number;
};

// Raw sideband ratio at or below 1: no finite occupation. Carries the value so
// callers can decide whether it is a statistical fluctuation or a
// miscalibration.
class NonPhysicalRatio : public Error {
public:
    explicit NonPhysicalRatio(double r)
        : Error("sideband ratio " + std::to_string(r) + " <= 1 has no finite occupation"),
          ratio(r) {}
    double ratio;
};

// Model validity guard tripped (e.g. damped linewidth no longer small
// compared to the cavity linewidth).
class RegimeViolation : public Error {
public:
    explicit RegimeViolation(const std::string& msg) : Error("regime: " + msg) {}
};

class FlatSpectrum : public Error {
public:
    FlatSpectrum() : Error("no peak above the noise floor in the fit window") {}
};

class NoConvergence : public Error {
public:
    explicit NoConvergence(int iters)
        : Error("fit did not converge in " + std::to_string(iters) + " iterations") {}
};

class SingularNormalMatrix : public Error {
public:
    SingularNormalMatrix() : Error("normal matrix is singular; fit window is degenerate") {}
};

class InsufficientBins : public Error {
public:
    explicit InsufficientBins(const std::string& msg) : Error("fit window: " + msg) {}
};

class EmptyRegion : public Error {
public:
    EmptyRegion() : Error("no bins fall inside the requested quiet regions") {}
};

class BandOutsideWindow : public Error {
public:
    BandOutsideWindow() : Error("integration band extends outside the periodogram window") {}
};

class MissingTone : public Error {
public:
    explicit MissingTone(const std::string& side)
        : Error("no calibration tone found in " + side + " window") {}
};

class InsufficientSpan : public Error {
public:
    explicit InsufficientSpan(const std::string& msg) : Error("extrapolation: " + msg) {}
};

class NegativeSlope : public Error {
public:
    explicit NegativeSlope(const std::string& msg) : Error("extrapolation: " + msg) {}
};

class DegenerateAbscissa : public Error {
public:
    DegenerateAbscissa() : Error("weighted linear fit: all abscissa values are equal") {}
};

class EmptyLedger : public Error {
public:
    EmptyLedger() : Error("ledger contains no records") {}
};

}  // namespace rrt
