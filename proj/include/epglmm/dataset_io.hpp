#pragma once

// Delimited-text exchange format for grouped binary data:
//
//   group,y,xF1,...,xFp,xR1,...,xRq
//
// `group` is an opaque label; rows sharing a label form one group (groups
// are kept in order of first appearance, rows in file order).

#include "epglmm/dataset.hpp"

#include <iosfwd>
#include <string>

namespace epglmm {

/// Throws std::invalid_argument with "<source>:<line>: ..." on malformed input.
GroupedDataset read_dataset_csv(std::istream& in, const std::string& source = "<input>");
GroupedDataset read_dataset_csv_file(const std::string& path);

void write_dataset_csv(std::ostream& out, const GroupedDataset& data);

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double v);

}  // namespace epglmm
