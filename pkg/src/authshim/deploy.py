"""Deployment artifacts rendered from a shim config.

Every generator is a pure function of the config, so the output can be
compared against checked-in golden files.
"""

from __future__ import annotations

from string import Template
from urllib.parse import urlsplit
from xml.sax.saxutils import quoteattr

from .config import ShimConfig
from .saml.request import EMAIL_NAMEID, POST_BINDING
from .saml.signature import fingerprint_sha256

BANNER = "Generated by authshim %s. Review before deploying: hostnames, image names and certificate paths are placeholders."

SHIM_SERVICE = "auth-shim"
SHIM_PORT = 8080
APP_SERVICE = "target-app"
LOGIN_PATH = "/saml/login"

NGINX_TEMPLATE = Template("""\
# $banner

# per-client request budget, shared by the login and application locations
limit_req_zone $$binary_remote_addr zone=mylimit:10m rate=10r/s;

# plain HTTP only redirects
server {
    listen 80;
    server_name $server_name;
    return 301 https://$$server_name$$request_uri;
}

# TLS front door; every request is checked by the shim first
server {
    listen 443 ssl http2;
    server_name $server_name;

    ssl_certificate /etc/nginx/ssl/cert.pem;
    ssl_certificate_key /etc/nginx/ssl/key.pem;
    ssl_protocols TLSv1.2 TLSv1.3;
    add_header Strict-Transport-Security "max-age=31536000";

    # subrequest target, unreachable from outside
    location = /auth/validate {
        internal;
        proxy_pass http://$shim_upstream/validate-session;
        proxy_pass_request_body off;
        proxy_set_header Content-Length "";
        proxy_set_header X-Original-Cookie $$http_cookie;
    }

    # login start and ACS go straight to the shim
    location /saml/ {
        limit_req zone=mylimit burst=20;
        proxy_pass http://$shim_upstream;
        proxy_set_header Host $$host;
        proxy_set_header X-Forwarded-For $$proxy_add_x_forwarded_for;
    }

    # everything else needs a valid shim cookie
    location / {
        limit_req zone=mylimit burst=20;

        auth_request /auth/validate;
        error_page 401 = @redirect_to_login;

        proxy_pass http://$app_upstream;
        proxy_set_header Host $$host;
        proxy_set_header X-Forwarded-For $$proxy_add_x_forwarded_for;
    }

    # no valid cookie: start a login
    location @redirect_to_login {
        return 302 $login_url;
    }
}
""")

COMPOSE_TEMPLATE = Template("""\
# $banner
services:
  $app_service:
    image: vendor/oss-application:latest
    restart: unless-stopped
    healthcheck:
      test: ["CMD", "curl", "-f", "http://localhost:$app_port/api/health"]

  $shim_service:
    build: ./auth-shim
    restart: unless-stopped
    environment:
      - APP_URL=$app_url
      - $admin_token_env=$${$admin_token_env}
      - SHIM_SIGNING_KEY=$${SHIM_SIGNING_KEY}
    depends_on:
      $app_service:
        condition: service_healthy

  nginx:
    image: nginx:alpine
    restart: unless-stopped
    ports: ["80:80", "443:443"]
    volumes:
      - ./nginx.conf:/etc/nginx/conf.d/default.conf:ro
""")

SP_METADATA_TEMPLATE = Template("""\
<?xml version="1.0" encoding="UTF-8"?>
<!-- $banner -->
<!-- Expected IdP: $idp_entity_id, signing certificate SHA-256 $fingerprint -->
<md:EntityDescriptor xmlns:md="urn:oasis:names:tc:SAML:2.0:metadata" entityID=$entity_id>
  <md:SPSSODescriptor AuthnRequestsSigned="false" WantAssertionsSigned="true" protocolSupportEnumeration="urn:oasis:names:tc:SAML:2.0:protocol">
    <md:NameIDFormat>$nameid_format</md:NameIDFormat>
    <md:AssertionConsumerService Binding="$binding" Location=$acs_url index="0" isDefault="true"/>
  </md:SPSSODescriptor>
</md:EntityDescriptor>
""")


def _upstream(url: str, default_port: int) -> tuple[str, int]:
    parts = urlsplit(url)
    return parts.hostname or "localhost", parts.port or default_port


def _login_url(config: ShimConfig) -> str:
    if config.public_base_url:
        return config.public_base_url.rstrip("/") + LOGIN_PATH
    parts = urlsplit(config.acs_url)
    return "%s://%s%s" % (parts.scheme, parts.netloc, LOGIN_PATH)


def render_nginx(config: ShimConfig) -> str:
    app_host, app_port = _upstream(config.connector_base_url, 80)
    server_name = urlsplit(config.public_base_url or config.acs_url).hostname
    return NGINX_TEMPLATE.substitute(
        banner=BANNER % "gen-nginx",
        server_name=server_name,
        shim_upstream="%s:%d" % (SHIM_SERVICE, SHIM_PORT),
        app_upstream="%s:%d" % (app_host, app_port),
        login_url=_login_url(config),
    )


def render_compose(config: ShimConfig) -> str:
    _, app_port = _upstream(config.connector_base_url, 80)
    return COMPOSE_TEMPLATE.substitute(
        banner=BANNER % "gen-compose",
        app_service=APP_SERVICE,
        shim_service=SHIM_SERVICE,
        app_port=app_port,
        app_url="http://%s:%d" % (APP_SERVICE, app_port),
        admin_token_env=config.admin_token_env_name,
    )


def render_sp_metadata(config: ShimConfig) -> str:
    return SP_METADATA_TEMPLATE.substitute(
        banner=BANNER % "gen-sp-metadata",
        idp_entity_id=config.idp_entity_id.replace("--", "-"),
        fingerprint=fingerprint_sha256(config.idp_certificate),
        entity_id=quoteattr(config.sp_entity_id),
        nameid_format=EMAIL_NAMEID,
        binding=POST_BINDING,
        acs_url=quoteattr(config.acs_url),
    )
