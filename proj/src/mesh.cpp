#include "dmd/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include <Eigen/Geometry>

namespace dmd {

void TriangleMesh::validate() const
{
    const auto n = static_cast<long>(vertices.size());
    for (std::size_t f = 0; f < faces.size(); ++f) {
        const Face& face = faces[f];
        for (int idx : face)
            if (idx < 0 || idx >= n)
                throw PreconditionError("face " + std::to_string(f) + " has an out-of-range vertex index");
        if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2])
            throw PreconditionError("face " + std::to_string(f) + " is degenerate (repeated vertex)");
    }
}

namespace {

std::array<int, 2> edge_key(int a, int b) { return a < b ? std::array<int, 2>{a, b} : std::array<int, 2>{b, a}; }

/// Sorted undirected edges with incident face counts.
std::vector<std::pair<std::array<int, 2>, int>> edge_incidence(const TriangleMesh& mesh)
{
    std::vector<std::array<int, 2>> all;
    all.reserve(mesh.faces.size() * 3);
    for (const Face& f : mesh.faces)
        for (int e = 0; e < 3; ++e)
            all.push_back(edge_key(f[e], f[(e + 1) % 3]));
    std::sort(all.begin(), all.end());
    std::vector<std::pair<std::array<int, 2>, int>> out;
    for (const auto& e : all) {
        if (!out.empty() && out.back().first == e)
            ++out.back().second;
        else
            out.emplace_back(e, 1);
    }
    return out;
}

struct DisjointSets {
    std::vector<int> parent;
    explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int x)
    {
        while (parent[x] != x)
            x = parent[x] = parent[parent[x]];
        return x;
    }
    void unite(int a, int b) { parent[find(a)] = find(b); }
};

} // namespace

std::vector<std::array<int, 2>> unique_edges(const TriangleMesh& mesh)
{
    std::vector<std::array<int, 2>> edges;
    for (const auto& [e, count] : edge_incidence(mesh))
        edges.push_back(e);
    return edges;
}

TopologyReport topology_report(const TriangleMesh& mesh)
{
    mesh.validate();
    TopologyReport r;
    const auto incidence = edge_incidence(mesh);
    r.vertex_count = static_cast<long>(mesh.vertices.size());
    r.edge_count = static_cast<long>(incidence.size());
    r.face_count = static_cast<long>(mesh.faces.size());
    r.euler_characteristic = r.vertex_count - r.edge_count + r.face_count;

    r.closed = !mesh.faces.empty();
    r.edge_manifold = true;
    for (const auto& [e, count] : incidence) {
        if (count != 2)
            r.closed = false;
        if (count > 2)
            r.edge_manifold = false;
    }

    DisjointSets sets(mesh.vertices.size());
    for (const Face& f : mesh.faces) {
        sets.unite(f[0], f[1]);
        sets.unite(f[1], f[2]);
    }
    for (int v = 0; v < static_cast<int>(mesh.vertices.size()); ++v)
        if (sets.find(v) == v)
            ++r.connected_components;

    if (r.closed && r.edge_manifold && r.connected_components == 1)
        r.genus = (2 - r.euler_characteristic) / 2;
    return r;
}

bool is_watertight(const TriangleMesh& mesh)
{
    if (mesh.faces.empty())
        return false;
    for (const auto& [e, count] : edge_incidence(mesh))
        if (count != 2)
            return false;
    return true;
}

TriangleMesh icosphere(int level, double radius, const Vec3& center)
{
    if (level < 0 || level > kMaxIcosphereLevel)
        throw PreconditionError("icosphere level must be in [0, " + std::to_string(kMaxIcosphereLevel) + "]");
    if (!(radius > 0))
        throw PreconditionError("icosphere radius must be positive");

    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    TriangleMesh mesh;
    mesh.vertices = {Vec3(-1, t, 0), Vec3(1, t, 0),   Vec3(-1, -t, 0), Vec3(1, -t, 0),
                     Vec3(0, -1, t), Vec3(0, 1, t),   Vec3(0, -1, -t), Vec3(0, 1, -t),
                     Vec3(t, 0, -1), Vec3(t, 0, 1),   Vec3(-t, 0, -1), Vec3(-t, 0, 1)};
    mesh.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                  {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                  {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
    for (Vec3& v : mesh.vertices)
        v.normalize();
    for (int l = 0; l < level; ++l) {
        mesh = midpoint_subdivide(mesh);
        for (Vec3& v : mesh.vertices)
            v.normalize();
    }
    for (Vec3& v : mesh.vertices)
        v = center + radius * v;
    return mesh;
}

TriangleMesh midpoint_subdivide(const TriangleMesh& mesh)
{
    mesh.validate();
    for (const auto& [e, count] : edge_incidence(mesh))
        if (count > 2)
            throw PreconditionError("cannot subdivide: edge (" + std::to_string(e[0]) + ", " +
                                    std::to_string(e[1]) + ") is non-manifold");

    TriangleMesh out;
    out.vertices = mesh.vertices;
    out.faces.reserve(mesh.faces.size() * 4);
    std::map<std::array<int, 2>, int> midpoints;
    auto midpoint = [&](int a, int b) {
        const auto key = edge_key(a, b);
        auto [it, inserted] = midpoints.try_emplace(key, static_cast<int>(out.vertices.size()));
        if (inserted)
            out.vertices.push_back(0.5 * (mesh.vertices[a] + mesh.vertices[b]));
        return it->second;
    };
    for (const Face& f : mesh.faces) {
        const int ab = midpoint(f[0], f[1]);
        const int bc = midpoint(f[1], f[2]);
        const int ca = midpoint(f[2], f[0]);
        out.faces.push_back({f[0], ab, ca});
        out.faces.push_back({ab, f[1], bc});
        out.faces.push_back({ca, bc, f[2]});
        out.faces.push_back({ab, bc, ca});
    }
    return out;
}

TriangleMesh midpoint_subdivide(const TriangleMesh& mesh, int levels)
{
    if (levels < 0)
        throw PreconditionError("subdivision levels must be non-negative");
    TriangleMesh out = mesh;
    for (int l = 0; l < levels; ++l)
        out = midpoint_subdivide(out);
    return out;
}

Vec3 face_normal(const TriangleMesh& mesh, std::size_t face)
{
    const Face& f = mesh.faces[face];
    const Vec3 n = (mesh.vertices[f[1]] - mesh.vertices[f[0]]).cross(mesh.vertices[f[2]] - mesh.vertices[f[0]]);
    const double len = n.norm();
    return len > 0 ? Vec3(n / len) : Vec3::Zero();
}

double face_area(const TriangleMesh& mesh, std::size_t face)
{
    const Face& f = mesh.faces[face];
    return 0.5 * (mesh.vertices[f[1]] - mesh.vertices[f[0]]).cross(mesh.vertices[f[2]] - mesh.vertices[f[0]]).norm();
}

// OBJ -----------------------------------------------------------------------

TriangleMesh parse_obj(const std::string& text)
{
    TriangleMesh mesh;
    std::istringstream in(text);
    std::string line;
    long line_no = 0;
    std::vector<std::pair<long, std::vector<long>>> polygons;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        std::istringstream rec(line);
        std::string tag;
        if (!(rec >> tag))
            continue;
        if (tag == "v") {
            Vec3 p;
            if (!(rec >> p[0] >> p[1] >> p[2]))
                throw ObjParseError(line_no, "malformed vertex record");
            if (!p.allFinite())
                throw ObjParseError(line_no, "non-finite vertex coordinate");
            mesh.vertices.push_back(p);
        } else if (tag == "f") {
            std::vector<long> idx;
            std::string token;
            while (rec >> token) {
                // keep the vertex part of v/vt/vn tokens
                const std::string head = token.substr(0, token.find('/'));
                std::size_t used = 0;
                long value = 0;
                try {
                    value = std::stol(head, &used);
                } catch (const std::exception&) {
                    throw ObjParseError(line_no, "malformed face index '" + token + "'");
                }
                if (used != head.size())
                    throw ObjParseError(line_no, "malformed face index '" + token + "'");
                if (value < 0)
                    value += static_cast<long>(mesh.vertices.size()) + 1;
                if (value < 1)
                    throw ObjParseError(line_no, "face index " + head + " out of range (OBJ is 1-based)");
                idx.push_back(value - 1);
            }
            if (idx.size() < 3)
                throw ObjParseError(line_no, "face record needs at least three vertices");
            polygons.emplace_back(line_no, std::move(idx));
        } else if (tag == "vn" || tag == "vt" || tag == "o" || tag == "g" || tag == "s" || tag == "usemtl" ||
                   tag == "mtllib") {
            continue;
        } else {
            throw ObjParseError(line_no, "unsupported record '" + tag + "'");
        }
    }
    const auto n = static_cast<long>(mesh.vertices.size());
    for (const auto& [ln, idx] : polygons) {
        for (long i : idx)
            if (i >= n)
                throw ObjParseError(ln, "face index " + std::to_string(i + 1) + " out of range");
        for (std::size_t k = 1; k + 1 < idx.size(); ++k)
            mesh.faces.push_back({static_cast<int>(idx[0]), static_cast<int>(idx[k]), static_cast<int>(idx[k + 1])});
    }
    return mesh;
}

TriangleMesh load_obj(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw FormatError("cannot open mesh file '" + path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_obj(buffer.str());
}

std::string format_obj(const TriangleMesh& mesh)
{
    std::ostringstream out;
    out << std::setprecision(17);
    for (const Vec3& v : mesh.vertices)
        out << "v " << v[0] << ' ' << v[1] << ' ' << v[2] << '\n';
    for (const Face& f : mesh.faces)
        out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
    return out.str();
}

void store_obj(const TriangleMesh& mesh, const std::string& path)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw FormatError("cannot write mesh file '" + path + "'");
    out << format_obj(mesh);
    if (!out)
        throw FormatError("failed writing mesh file '" + path + "'");
}

} // namespace dmd
