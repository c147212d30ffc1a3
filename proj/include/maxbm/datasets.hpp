#pragma once

// Bundled datasets.

#include <string_view>

namespace maxbm::datasets {

/// Zachary's karate club: 34 members, 78 undirected friendship edges.
inline constexpr std::string_view kKarateEdges = R"EDGES(# Zachary karate club friendship network (78 undirected edges, nodes 1..34)
1 2
1 3
1 4
1 5
1 6
1 7
1 8
1 9
1 11
1 12
1 13
1 14
1 18
1 20
1 22
1 32
2 3
2 4
2 8
2 14
2 18
2 20
2 22
2 31
3 4
3 8
3 9
3 10
3 14
3 28
3 29
3 33
4 8
4 13
4 14
5 7
5 11
6 7
6 11
6 17
7 17
9 31
9 33
9 34
10 34
14 34
15 33
15 34
16 33
16 34
19 33
19 34
20 34
21 33
21 34
23 33
23 34
24 26
24 28
24 30
24 33
24 34
25 26
25 28
25 32
26 32
27 30
27 34
28 34
29 32
29 34
30 33
30 34
31 33
31 34
32 33
32 34
33 34
)EDGES";

/// Faction of each member after the split.
inline constexpr std::string_view kKarateLabels = R"LABELS(node,label
1,instructor
2,instructor
3,instructor
4,instructor
5,instructor
6,instructor
7,instructor
8,instructor
9,instructor
10,president
11,instructor
12,instructor
13,instructor
14,instructor
15,president
16,president
17,instructor
18,instructor
19,president
20,instructor
21,president
22,instructor
23,president
24,president
25,president
26,president
27,president
28,president
29,president
30,president
31,president
32,president
33,president
34,president
)LABELS";

}  // namespace maxbm::datasets
