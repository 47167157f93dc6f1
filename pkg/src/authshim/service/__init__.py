from .app import ShimApp, app_from_runtime, create_shim_app
from .cookies import mint_shim_cookie, parse_cookie_header, verify_shim_cookie
from .login import LoginOutcome, LoginService, LoginStatus
