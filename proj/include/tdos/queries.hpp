#pragma once

#include <vector>

#include "tdos/grad.hpp"

namespace tdos {

// Text queries for the decoders: K ID class embeddings followed by the OOD
// prompt queries. Query-to-class assignment is fixed by construction; every
// OOD query maps to the extra class index K.
struct QuerySet {
  std::vector<Tensor> rows;      // each unit-norm [d_txt], in query order
  std::vector<int> query_class;  // per query; OOD queries carry num_id_classes
  int num_id_classes = 0;

  int size() const { return static_cast<int>(rows.size()); }
  int ood_class() const { return num_id_classes; }
  bool is_ood_query(int q) const {
    return query_class[q] == num_id_classes;
  }
  int num_ood_queries() const {
    int n = 0;
    for (int q = 0; q < size(); ++q) n += is_ood_query(q);
    return n;
  }
};

}  // namespace tdos
