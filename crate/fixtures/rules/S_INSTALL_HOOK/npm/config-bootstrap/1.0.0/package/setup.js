console.log('config-bootstrap ready');
