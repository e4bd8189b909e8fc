#include "codemend/subprocess.hpp"

#include "codemend/error.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace codemend {

namespace {

void close_fd(int& fd) {
  if (fd >= 0) {
    ::close(fd);
    fd = -1;
  }
}

} // namespace

ProcessResult run_process(const std::vector<std::string>& argv,
                          const ProcessOptions& options) {
  if (argv.empty()) {
    throw ConfigError("run_process: empty argv");
  }

  int out_pipe[2];
  int err_pipe[2];
  if (::pipe(out_pipe) != 0 || ::pipe(err_pipe) != 0) {
    throw ToolError(std::string("pipe failed: ") + std::strerror(errno));
  }

  const pid_t pid = ::fork();
  if (pid < 0) {
    throw ToolError(std::string("fork failed: ") + std::strerror(errno));
  }

  if (pid == 0) {
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::dup2(err_pipe[1], STDERR_FILENO);
    ::close(out_pipe[0]);
    ::close(out_pipe[1]);
    ::close(err_pipe[0]);
    ::close(err_pipe[1]);
    // Detach stdin so the child cannot block on the parent's terminal.
    int devnull = ::open("/dev/null", O_RDONLY);
    if (devnull >= 0) {
      ::dup2(devnull, STDIN_FILENO);
      ::close(devnull);
    }
    if (options.cwd && ::chdir(options.cwd->c_str()) != 0) {
      ::_exit(127);
    }
    if (options.cpu_limit_s > 0) {
      rlimit lim{options.cpu_limit_s, options.cpu_limit_s + 1};
      ::setrlimit(RLIMIT_CPU, &lim);
    }
    std::vector<char*> args;
    args.reserve(argv.size() + 1);
    for (const auto& a : argv) {
      args.push_back(const_cast<char*>(a.c_str()));
    }
    args.push_back(nullptr);
    ::execvp(args[0], args.data());
    ::_exit(127);
  }

  ::close(out_pipe[1]);
  ::close(err_pipe[1]);
  int out_fd = out_pipe[0];
  int err_fd = err_pipe[0];
  ::fcntl(out_fd, F_SETFL, O_NONBLOCK);
  ::fcntl(err_fd, F_SETFL, O_NONBLOCK);

  ProcessResult result;
  const auto deadline = std::chrono::steady_clock::now() + options.timeout;
  const bool bounded = options.timeout != std::chrono::milliseconds::max();

  auto drain = [](int& fd, std::string& sink) {
    char buf[4096];
    for (;;) {
      const ssize_t n = ::read(fd, buf, sizeof(buf));
      if (n > 0) {
        sink.append(buf, static_cast<size_t>(n));
      } else if (n == 0) {
        close_fd(fd);
        return;
      } else {
        return; // EAGAIN or error; poll again later
      }
    }
  };

  bool killed = false;
  std::chrono::steady_clock::time_point kill_time;
  while (out_fd >= 0 || err_fd >= 0) {
    pollfd fds[2];
    nfds_t nfds = 0;
    if (out_fd >= 0) {
      fds[nfds++] = {out_fd, POLLIN, 0};
    }
    if (err_fd >= 0) {
      fds[nfds++] = {err_fd, POLLIN, 0};
    }
    int wait_ms = 200;
    if (bounded) {
      const auto now = std::chrono::steady_clock::now();
      const auto remaining =
          std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now);
      if (remaining.count() <= 0) {
        if (!killed) {
          ::kill(pid, SIGKILL);
          killed = true;
          kill_time = now;
          result.timed_out = true;
        } else if (now - kill_time > std::chrono::milliseconds(500)) {
          // Grandchildren may keep the pipe open past the kill; stop reading.
          break;
        }
        wait_ms = 50;
      } else {
        wait_ms = static_cast<int>(std::min<long long>(remaining.count(), 200));
      }
    }
    const int rc = ::poll(fds, nfds, wait_ms);
    if (rc < 0 && errno != EINTR) {
      break;
    }
    if (out_fd >= 0) {
      drain(out_fd, result.out);
    }
    if (err_fd >= 0) {
      drain(err_fd, result.err);
    }
  }
  close_fd(out_fd);
  close_fd(err_fd);

  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  if (WIFEXITED(status)) {
    result.exit_code = WEXITSTATUS(status);
  } else if (WIFSIGNALED(status)) {
    result.exit_code = 128 + WTERMSIG(status);
  }
  return result;
}

} // namespace codemend
