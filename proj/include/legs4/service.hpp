#pragma once

#include "legs4/codec.hpp"
#include "legs4/highlights.hpp"
#include "legs4/query.hpp"
#include "legs4/scene.hpp"
#include "legs4/text_resolver.hpp"

#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace httplib {
class Server;
}

namespace legs4 {

struct ServiceScene {
    std::string id;
    DynamicScene scene;
    std::optional<CodecParams> codec;
};

/// Loads every <dir>/<id>/scene.json, with an optional codec in <dir>/<id>/codec/.
std::vector<ServiceScene> load_scene_registry(const std::filesystem::path& dir);

struct HttpResult {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
};

using Params = std::map<std::string, std::string>;

/// Request handling independent of the transport; `bind` attaches it to an
/// httplib server. Scenes are read-only; the only mutable state is the
/// insert-once query cache and the highlight job table.
class QueryService {
public:
    QueryService(std::vector<ServiceScene> scenes, TextResolver resolver, QueryOptions options = {});
    ~QueryService();

    HttpResult health() const;
    HttpResult scenes() const;
    HttpResult query(const std::string& body);
    HttpResult render(const Params& params) const;
    HttpResult depth(const Params& params) const;
    HttpResult relevancy(const Params& params) const;
    HttpResult start_highlight(const std::string& body);
    HttpResult highlight_status(const std::string& job) const;
    HttpResult highlight_frame(const std::string& job, int index) const;

    /// Blocks until the job finishes (tests and the CLI).
    void wait_for_job(const std::string& job) const;

    void bind(httplib::Server& server);

private:
    struct QueryRecord {
        std::string id;
        size_t scene = 0;
        QueryEmbedding q;
        CanonicalSet canon;
        RelevancyVolume volume;
        Localization loc;
        std::string response;
    };
    struct Job {
        std::shared_future<std::shared_ptr<Highlight>> result;
        std::string error;
    };

    size_t scene_index(const std::string& id) const;
    std::shared_ptr<const QueryRecord> find_query(const std::string& id) const;
    const CodecParams* codec(size_t scene) const;

    std::vector<ServiceScene> scenes_;
    TextResolver resolver_;
    QueryOptions options_;
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<const QueryRecord>> cache_;
    std::map<std::string, std::shared_ptr<Job>> jobs_;
    size_t next_job_ = 0;
};

} // namespace legs4
