#!/usr/bin/env python3
"""
rftrack result server
Serves a finished run directory: Flask for the pages and API, on Tornado
"""

import logging
import os

import tornado.web
from tornado.httpserver import HTTPServer as TornadoHTTPServer
from tornado.ioloop import IOLoop
from tornado.wsgi import WSGIContainer

from flask_app import RunWebApp

logger = logging.getLogger('rftrack.web')


class ResultServer:
    """Tornado HTTP server wrapping the run's Flask app"""

    def __init__(self, config, run_dir=None):
        self.config = config
        self.run_dir = run_dir or config.get('server', 'run_dir')
        self.host = config.get('server', 'host')
        self.port = config.get('server', 'port')
        if not os.path.isdir(self.run_dir):
            raise ValueError(f"Run directory '{self.run_dir}' does not exist")
        self.web_app = RunWebApp(self.run_dir, config)

    def build_application(self):
        # All routes handled by Flask WSGI
        wsgi_container = WSGIContainer(self.web_app.get_app())
        return tornado.web.Application([
            (r".*", tornado.web.FallbackHandler, dict(fallback=wsgi_container)),
        ])

    def start(self):
        """Start serving (blocks until Ctrl+C)"""
        logger.info("=" * 60)
        logger.info("Starting rftrack result server")
        logger.info("=" * 60)
        logger.info(f"Run directory: {self.run_dir}")

        http_server = TornadoHTTPServer(self.build_application())
        http_server.listen(self.port, address=self.host)

        logger.info(f"Status page: http://{self.host}:{self.port}/")
        logger.info(f"Object lookup: http://{self.host}:{self.port}/api/objects/<tag_id>")
        logger.info("Press Ctrl+C to stop")

        try:
            IOLoop.current().start()
        except KeyboardInterrupt:
            logger.info("Shutting down...")
            IOLoop.current().stop()
            logger.info("Server stopped.")
