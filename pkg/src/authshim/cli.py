from __future__ import annotations

import logging
import socket
import sys
import time

import click

from .config import ConfigError, load_runtime, load_shim_config

DEFAULT_BIND = "127.0.0.1:8080"

config_option = click.option(
    "--config", "config_path", envvar="SHIM_CONFIG", required=True,
    type=click.Path(dir_okay=False), help="Shim YAML config (or $SHIM_CONFIG).",
)


def _fail(problems, code: int = 2):
    for problem in problems:
        click.echo("error: %s" % problem, err=True)
    sys.exit(code)


def _parse_bind(value: str) -> tuple[str, int]:
    host, sep, port = value.rpartition(":")
    if not sep or not port.isdigit():
        raise click.BadParameter("expected host:port", param_hint="--bind")
    return host.strip("[]") or "0.0.0.0", int(port)


def _generator_config(config_path):
    try:
        return load_shim_config(config_path, require_signing_key=False)
    except ConfigError as exc:
        _fail(exc.problems)


@click.group()
def main():
    """Authentication shim: SAML login in front of an application's admin API."""


@main.command()
@config_option
@click.option("--bind", default=DEFAULT_BIND, show_default=True, help="Listen address host:port.")
@click.option("--log-level", default="info", show_default=True)
def serve(config_path, bind, log_level):
    """Validate the config, then serve."""
    import uvicorn

    from .service import app_from_runtime

    logging.basicConfig(level=log_level.upper(), format="%(asctime)s %(levelname)s %(name)s %(message)s")
    try:
        runtime = load_runtime(config_path)
    except ConfigError as exc:
        _fail(exc.problems)
    host, port = _parse_bind(bind)
    family = socket.AF_INET6 if ":" in host else socket.AF_INET
    sock = socket.socket(family, socket.SOCK_STREAM, socket.IPPROTO_TCP)  # proto matters, see serving.py
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, port))
    except OSError as exc:
        _fail(["cannot bind %s: %s" % (bind, exc.strerror)], code=3)
    app = app_from_runtime(runtime)
    server = uvicorn.Server(uvicorn.Config(app, log_level=log_level, access_log=False, lifespan="off"))
    click.echo("authshim serving on http://%s:%d" % sock.getsockname()[:2], err=True)
    server.run(sockets=[sock])


@main.command("check-config")
@config_option
def check_config(config_path):
    """Run every startup validation without serving."""
    try:
        load_runtime(config_path)
    except ConfigError as exc:
        for problem in exc.problems:
            click.echo("error: %s" % problem)
        click.echo("FAILED, %d errors" % len(exc.problems))
        sys.exit(1)
    click.echo("OK, 0 errors")


@main.command("gen-nginx")
@config_option
def gen_nginx(config_path):
    """Print a hardened reverse-proxy config."""
    from .deploy import render_nginx

    click.echo(render_nginx(_generator_config(config_path)), nl=False)


@main.command("gen-compose")
@config_option
def gen_compose(config_path):
    """Print a compose file for the three-service stack."""
    from .deploy import render_compose

    click.echo(render_compose(_generator_config(config_path)), nl=False)


@main.command("gen-sp-metadata")
@config_option
def gen_sp_metadata(config_path):
    """Print SAML service-provider metadata for registering with the IdP."""
    from .deploy import render_sp_metadata

    click.echo(render_sp_metadata(_generator_config(config_path)), nl=False)


@main.command()
@click.option("--user", "email", default="admin@example.com", show_default=True)
@click.option("--path", "original_path", default="/dashboards/sales", show_default=True)
def demo(email, original_path):
    """Run a throwaway IdP, application and shim on loopback and log in once."""
    from .harness import Federation

    logging.basicConfig(level=logging.WARNING)
    started = time.perf_counter()
    with Federation.loopback_federation() as federation:
        click.echo("idp   %s" % federation.idp_base)
        click.echo("app   %s" % federation.app_base)
        click.echo("shim  %s" % federation.shim_url)
        result = federation.login(user=email, original_path=original_path)
        elapsed = time.perf_counter() - started
        if result.status_code != 302:
            click.echo("login failed: HTTP %d" % result.status_code, err=True)
            sys.exit(1)
        snapshot = federation.app_state.snapshot()
        user = snapshot.user_by_email(email)
        token = result.session_cookies.get(federation.config.session_cookie_name, "")
        if user is None or not token:
            click.echo("login redirected but no user or session was created", err=True)
            sys.exit(1)
        click.echo("user     %s (id %s, active=%s)" % (user.email, user.user_id, user.active))
        click.echo("roles    {%s}" % ",".join(sorted(user.roles)))
        click.echo("session  %s... (%s cookie)" % (token[:8], federation.config.session_cookie_name))
        click.echo("redirect %s" % result.location)
        click.echo("elapsed  %.2fs" % elapsed)


if __name__ == "__main__":
    main()
