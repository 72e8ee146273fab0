#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace crossrec {

// Every failure carries a stable machine-parsable name. The CLI prints the
// name as the final output line (`ERROR <name>: <detail>`), so names are part
// of the external contract and must not change casually.
class Error : public std::runtime_error {
public:
    Error(std::string name, const std::string& detail)
        : std::runtime_error(name + ": " + detail), name_(std::move(name)) {}

    const std::string& name() const { return name_; }

private:
    std::string name_;
};

namespace errors {

inline Error empty_corpus(const std::string& d) { return {"EmptyCorpus", d}; }
inline Error malformed_record(const std::string& d) { return {"MalformedRecord", d}; }
inline Error insufficient_history(const std::string& d) { return {"InsufficientHistory", d}; }
inline Error candidate_pool_too_small(const std::string& d) { return {"CandidatePoolTooSmall", d}; }
inline Error config_invalid(const std::string& d) { return {"ConfigInvalid", d}; }
inline Error dimension_mismatch(const std::string& d) { return {"DimensionMismatch", d}; }
inline Error non_finite_value(const std::string& d) { return {"NonFiniteValue", d}; }
inline Error duplicate_item(const std::string& d) { return {"DuplicateItem", d}; }
inline Error missing_item(const std::string& d) { return {"MissingItem", d}; }
inline Error io_failure(const std::string& d) { return {"IoFailure", d}; }
inline Error index_out_of_range(const std::string& d) { return {"IndexOutOfRange", d}; }
inline Error empty_batch(const std::string& d) { return {"EmptyBatch", d}; }
inline Error non_finite_gradient(const std::string& d) { return {"NonFiniteGradient", d}; }
inline Error shape_mismatch(const std::string& d) { return {"ShapeMismatch", d}; }
inline Error missing_candidates(const std::string& d) { return {"MissingCandidates", d}; }
inline Error empty_ranks(const std::string& d) { return {"EmptyRanks", d}; }

}  // namespace errors
}  // namespace crossrec
