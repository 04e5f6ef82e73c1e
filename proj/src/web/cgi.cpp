#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <mutex>
#include <thread>

#include <spdlog/spdlog.h>

#include "dacs/web.hpp"

namespace dacs::web {

namespace {

constexpr std::size_t kMaxCgiOutput = 64u << 20;

struct Fd {
    int fd = -1;
    ~Fd() { reset(); }
    void reset() {
        if (fd >= 0) ::close(fd);
        fd = -1;
    }
};

HttpResponse plain(int status, std::string body) {
    HttpResponse r;
    r.status = status;
    r.headers = {{"Content-Type", "text/plain"}};
    r.body = std::move(body);
    return r;
}

HttpResponse parse_cgi_output(std::string_view out) {
    HttpResponse r;
    std::size_t pos = 0;
    bool ended = false;
    while (pos < out.size()) {
        auto nl = out.find('\n', pos);
        if (nl == std::string_view::npos) break;
        auto line = out.substr(pos, nl - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        pos = nl + 1;
        if (line.empty()) {
            ended = true;
            break;
        }
        auto colon = line.find(':');
        if (colon == std::string_view::npos || colon == 0) return plain(500, "malformed CGI header line\n");
        std::string name(line.substr(0, colon));
        auto value = line.substr(colon + 1);
        while (!value.empty() && value.front() == ' ') value.remove_prefix(1);
        if (name == "Status" || name == "status") {
            if (value.size() < 3) return plain(500, "malformed CGI Status header\n");
            int code = 0;
            for (char c : value.substr(0, 3)) {
                if (c < '0' || c > '9') return plain(500, "malformed CGI Status header\n");
                code = code * 10 + (c - '0');
            }
            r.status = code;
        } else {
            r.headers.emplace_back(std::move(name), std::string(value));
        }
    }
    if (!ended) return plain(500, "CGI output has no header block\n");
    bool has_type = static_cast<bool>(r.header("content-type"));
    bool has_location = static_cast<bool>(r.header("location"));
    if (!has_type && !has_location) return plain(500, "CGI output has no Content-Type\n");
    if (has_location && r.status == 200 && !has_type) r.status = 302;
    r.body = std::string(out.substr(pos));
    return r;
}

void kill_child(pid_t pid) {
    ::kill(-pid, SIGKILL);
    ::kill(pid, SIGKILL);
    int status = 0;
    while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
    }
}

}  // namespace

HttpResponse run_cgi(const fs::path& script, const std::vector<std::string>& env, std::string_view body,
                     std::chrono::milliseconds timeout) {
    static std::once_flag sigpipe_once;
    std::call_once(sigpipe_once, [] { ::signal(SIGPIPE, SIG_IGN); });

    // Everything the child touches is prepared before fork.
    std::string path = script.string();
    std::string dir = script.parent_path().string();
    std::vector<char*> argv = {path.data(), nullptr};
    std::vector<std::string> env_copy = env;
    std::vector<char*> envp;
    for (auto& e : env_copy) envp.push_back(e.data());
    envp.push_back(nullptr);

    int in_pipe[2], out_pipe[2];
    if (::pipe2(in_pipe, O_CLOEXEC) != 0) return plain(500, "pipe failed\n");
    Fd in_r{in_pipe[0]}, in_w{in_pipe[1]};
    if (::pipe2(out_pipe, O_CLOEXEC) != 0) return plain(500, "pipe failed\n");
    Fd out_r{out_pipe[0]}, out_w{out_pipe[1]};

    pid_t pid = ::fork();
    if (pid < 0) return plain(500, "fork failed\n");
    if (pid == 0) {
        ::setpgid(0, 0);
        ::signal(SIGPIPE, SIG_DFL);
        if (::dup2(in_pipe[0], 0) < 0 || ::dup2(out_pipe[1], 1) < 0) ::_exit(126);
        if (::chdir(dir.c_str()) != 0) ::_exit(126);
        ::execve(path.c_str(), argv.data(), envp.data());
        ::_exit(127);
    }
    in_r.reset();
    out_w.reset();
    ::fcntl(in_w.fd, F_SETFL, O_NONBLOCK);
    ::fcntl(out_r.fd, F_SETFL, O_NONBLOCK);
    if (body.empty()) in_w.reset();

    auto deadline = std::chrono::steady_clock::now() + timeout;
    std::string out;
    char buf[16384];
    while (out_r.fd >= 0) {
        auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) {
            kill_child(pid);
            spdlog::warn("cgi {} exceeded {} ms", path, timeout.count());
            return plain(504, "CGI program timed out\n");
        }
        pollfd fds[2] = {{out_r.fd, POLLIN, 0}, {in_w.fd, POLLOUT, 0}};
        int n = ::poll(fds, in_w.fd >= 0 ? 2 : 1, static_cast<int>(left.count()));
        if (n < 0 && errno != EINTR) break;
        if (n <= 0) continue;
        if (in_w.fd >= 0 && (fds[1].revents & (POLLOUT | POLLERR | POLLHUP))) {
            ssize_t w = ::write(in_w.fd, body.data(), body.size());
            if (w > 0) body.remove_prefix(static_cast<std::size_t>(w));
            if ((w < 0 && errno != EAGAIN) || body.empty()) in_w.reset();
        }
        if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
            ssize_t r = ::read(out_r.fd, buf, sizeof buf);
            if (r > 0) {
                out.append(buf, static_cast<std::size_t>(r));
                if (out.size() > kMaxCgiOutput) {
                    kill_child(pid);
                    return plain(500, "CGI output too large\n");
                }
            } else if (r == 0 || errno != EAGAIN) {
                out_r.reset();
            }
        }
    }
    in_w.reset();

    int status = 0;
    while (true) {
        pid_t w = ::waitpid(pid, &status, WNOHANG);
        if (w == pid) break;
        if (w < 0 && errno != EINTR) break;
        if (std::chrono::steady_clock::now() >= deadline) {
            kill_child(pid);
            return plain(504, "CGI program timed out\n");
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        spdlog::warn("cgi {} failed with status {}", path, status);
        return plain(500, "CGI program failed\n");
    }
    return parse_cgi_output(out);
}

}  // namespace dacs::web
