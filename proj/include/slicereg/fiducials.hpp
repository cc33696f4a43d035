#pragma once

// Fiducial lists: one point per line "id, x, y[, z]" in µm; '#' starts a comment.

#include "error.hpp"
#include "image.hpp"
#include "io.hpp"

#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace slicereg
{

struct Fiducial
{
    std::string id;
    Vec3 position{};
};

inline std::vector<Fiducial> parse_fiducials(const std::string& text)
{
    std::vector<Fiducial> out;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line))
    {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        std::vector<std::string> fields;
        std::stringstream ls(line);
        std::string field;
        while (std::getline(ls, field, ','))
        {
            const auto b = field.find_first_not_of(" \t\r");
            const auto e = field.find_last_not_of(" \t\r");
            fields.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
        }
        if (fields.empty() || (fields.size() == 1 && fields[0].empty()))
            continue;
        require(fields.size() == 3 || fields.size() == 4, ErrorCode::Format,
                "fiducial line " + std::to_string(line_no) + " needs 'id, x, y[, z]'");
        Fiducial f{fields[0], {}};
        try
        {
            f.position.x = std::stod(fields[1]);
            f.position.y = std::stod(fields[2]);
            if (fields.size() == 4)
                f.position.z = std::stod(fields[3]);
        }
        catch (const std::exception&)
        {
            throw Error(ErrorCode::Format, "fiducial line " + std::to_string(line_no) + " has a non-numeric coordinate");
        }
        out.push_back(std::move(f));
    }
    return out;
}

inline std::vector<Fiducial> read_fiducials(const std::filesystem::path& path)
{
    return parse_fiducials(detail::read_file(path));
}

inline std::string format_fiducials(const std::vector<Fiducial>& pts, bool with_z)
{
    std::ostringstream out;
    out.precision(17);
    out << (with_z ? "# id, x_um, y_um, z_um\n" : "# id, x_um, y_um\n");
    for (const auto& f : pts)
    {
        out << f.id << ", " << f.position.x << ", " << f.position.y;
        if (with_z)
            out << ", " << f.position.z;
        out << '\n';
    }
    return out.str();
}

inline void write_fiducials(const std::filesystem::path& path, const std::vector<Fiducial>& pts, bool with_z)
{
    detail::write_file(path, format_fiducials(pts, with_z));
}

/// Pairs two lists by id; throws listing every unmatched id.
inline std::vector<std::pair<Fiducial, Fiducial>> pair_by_id(const std::vector<Fiducial>& a,
                                                             const std::vector<Fiducial>& b)
{
    std::map<std::string, const Fiducial*> index;
    for (const auto& f : b)
        index[f.id] = &f;
    std::vector<std::pair<Fiducial, Fiducial>> pairs;
    std::string unmatched;
    std::map<std::string, bool> used;
    for (const auto& f : a)
    {
        auto it = index.find(f.id);
        if (it == index.end())
            unmatched += (unmatched.empty() ? "" : ", ") + f.id;
        else
        {
            pairs.emplace_back(f, *it->second);
            used[f.id] = true;
        }
    }
    for (const auto& f : b)
        if (!used.count(f.id))
            unmatched += (unmatched.empty() ? "" : ", ") + f.id;
    require(unmatched.empty(), ErrorCode::Fiducial, "unmatched fiducial ids: " + unmatched);
    require(!pairs.empty(), ErrorCode::Fiducial, "no fiducial pairs");
    return pairs;
}

} // namespace slicereg
